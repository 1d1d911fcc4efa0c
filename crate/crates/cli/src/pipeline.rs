//! The end-to-end run: ingest, pools, splits, training, ranking,
//! alignment verification, evaluation, aggregation, significance,
//! reporting. Phases execute in a fixed order; the vault phase tag
//! advanced between them is the single place leakage legality changes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Result};
use rayon::prelude::*;

use nrank_core::corpus::{CorpusStats, CorpusStore, Grade, Judge};
use nrank_core::distill::{self, DistillConfig, TeacherScores};
use nrank_core::embed::{rank_cosine, EmbeddingTable};
use nrank_core::lexical::{
    rank_bm25, rank_bscore, rank_dirichlet, rank_dph, rank_random, CollectionStats,
    DocStats, PoolIndex, PseudoQuery, Scored,
};
use nrank_core::metrics::{err_at_k, kendall_tau_b, ndcg_at_k, spearman_rho};
use nrank_core::neural::{self, LossKind, TrainConfig};
use nrank_core::pools::{build_pools, eligible_queries, pool_stats, sizes_over_queries, PoolSet, PoolVariant};
use nrank_core::splits::{guard_no_query_leak, make_splits, Part, SplitManifest};
use nrank_core::stats::EvalRow;
use nrank_core::vault::{LabelVault, LeakyOverride, Phase};
use nrank_core::{Error as CoreError, QueryId, StoryId};

use crate::config::{method_needs_embeddings, method_needs_training, RunConfig};
use crate::formats::{
    append_audit, ingest, load_embeddings, read_eval_rows, read_mlp_checkpoint, read_predictions,
    read_split, read_student_checkpoint, read_teacher, write_eval_rows, write_labels,
    write_mlp_checkpoint, write_pools, write_predictions, write_split, write_stories,
    write_student_checkpoint, PredictionRecord,
};
use crate::report;

/// Artifact layout inside a run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn new(dir: impl Into<PathBuf>) -> RunPaths {
        RunPaths { dir: dir.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.dir.join("run.toml")
    }

    pub fn store_stories(&self) -> PathBuf {
        self.dir.join("store/stories.jsonl")
    }

    pub fn store_labels(&self, judge: Judge) -> PathBuf {
        match judge {
            Judge::A => self.dir.join("store/labels_a.jsonl"),
            Judge::B => self.dir.join("store/labels_b.jsonl"),
        }
    }

    pub fn corpus_stats(&self) -> PathBuf {
        self.dir.join("corpus_stats.json")
    }

    pub fn pools(&self) -> PathBuf {
        self.dir.join("pools.jsonl")
    }

    pub fn pool_stats_csv(&self) -> PathBuf {
        self.dir.join("pool_stats.csv")
    }

    pub fn split(&self, seed: u64) -> PathBuf {
        self.dir.join(format!("splits/splits_seed{seed}.jsonl"))
    }

    pub fn checkpoint(&self, method: &str, seed: u64) -> PathBuf {
        self.dir.join(format!("models/{method}_seed{seed}.ckpt"))
    }

    pub fn trace(&self, method: &str, seed: u64) -> PathBuf {
        self.dir.join(format!("models/{method}_seed{seed}_trace.csv"))
    }

    pub fn predictions(&self, method: &str, seed: u64) -> PathBuf {
        self.dir.join(format!("preds/{method}_seed{seed}.jsonl"))
    }

    pub fn eval_rows(&self) -> PathBuf {
        self.dir.join("eval_rows.jsonl")
    }

    pub fn audit(&self) -> PathBuf {
        self.dir.join("audit.jsonl")
    }
}

fn judge_from(name: &str) -> Judge {
    if name == "a" {
        Judge::A
    } else {
        Judge::B
    }
}

pub fn load_store(cfg: &RunConfig, paths: &RunPaths) -> Result<(CorpusStore, CorpusStats)> {
    let _ = cfg;
    ingest(
        &paths.store_stories(),
        &paths.store_labels(Judge::A),
        &paths.store_labels(Judge::B),
    )
}

pub fn load_manifest(paths: &RunPaths, seed: u64) -> Result<SplitManifest> {
    read_split(&paths.split(seed), seed)
}

pub fn load_table(cfg: &RunConfig) -> Result<EmbeddingTable> {
    let mut files = cfg.inputs.embeddings.iter();
    let first = files
        .next()
        .ok_or_else(|| anyhow!("no embeddings configured under [inputs]; required by at least one method"))?;
    let mut table = load_embeddings(first)?;
    for path in files {
        table.merge(load_embeddings(path)?)?;
    }
    Ok(table)
}

pub fn load_teacher_scores(cfg: &RunConfig) -> Result<TeacherScores> {
    let path = cfg
        .inputs
        .teacher
        .as_ref()
        .ok_or_else(|| anyhow!("no teacher scores configured under [inputs]; required by distill"))?;
    read_teacher(path)
}

pub fn build_vault(store: &CorpusStore) -> LabelVault {
    LabelVault::new(store.valid_grades(Judge::A), store.valid_grades(Judge::B))
}

/// Normalise the configured input corpus into the run's store/ and
/// write corpus stats.
pub fn stage_ingest(cfg: &RunConfig, paths: &RunPaths) -> Result<CorpusStats> {
    let stories = cfg.inputs.stories.as_ref().ok_or_else(|| anyhow!("inputs.stories not set"))?;
    let labels_a = cfg.inputs.labels_a.as_ref().ok_or_else(|| anyhow!("inputs.labels_a not set"))?;
    let labels_b = cfg.inputs.labels_b.as_ref().ok_or_else(|| anyhow!("inputs.labels_b not set"))?;
    let (store, stats) = ingest(stories, labels_a, labels_b)?;
    let stories_out: Vec<_> = store
        .stories()
        .values()
        .map(|s| (s.story_id.clone(), store.query(&s.query_id).unwrap().clone(), s.text.clone()))
        .collect();
    write_stories(&paths.store_stories(), &stories_out)?;
    write_labels(&paths.store_labels(Judge::A), &store.labels(Judge::A).values().cloned().collect::<Vec<_>>())?;
    write_labels(&paths.store_labels(Judge::B), &store.labels(Judge::B).values().cloned().collect::<Vec<_>>())?;
    std::fs::write(&paths.corpus_stats(), serde_json::to_string_pretty(&stats)? + "\n")?;
    Ok(stats)
}

/// Build and persist all pool variants plus across-query statistics.
pub fn stage_pools(cfg: &RunConfig, paths: &RunPaths) -> Result<BTreeMap<QueryId, PoolSet>> {
    let (store, _) = load_store(cfg, paths)?;
    let pools = build_pools(&store);
    write_pools(&paths.pools(), &pools)?;
    let mut stats_rows = Vec::new();
    for variant in [PoolVariant::Raw, PoolVariant::ValidA, PoolVariant::ValidB, PoolVariant::Intersection] {
        let sizes = sizes_over_queries(&pools, variant);
        if !sizes.is_empty() {
            stats_rows.push(("queries".to_string(), pool_stats(&sizes, variant)?));
        }
    }
    report::write_pool_stats_csv(&paths.pool_stats_csv(), &stats_rows, cfg)?;
    Ok(pools)
}

/// Seeded query-level splits with leakage guards, plus the pooled
/// test-row statistics that depend on them.
pub fn stage_split(cfg: &RunConfig, paths: &RunPaths) -> Result<Vec<SplitManifest>> {
    let (store, _) = load_store(cfg, paths)?;
    let pools = build_pools(&store);
    let eligible = eligible_queries(&pools, cfg.run.k)?;
    let sizes = (cfg.run.sizes[0], cfg.run.sizes[1], cfg.run.sizes[2]);
    let manifests = make_splits(&eligible, &cfg.run.seeds, sizes)?;
    for manifest in &manifests {
        let rows: Vec<(QueryId, Part)> =
            manifest.assignment.iter().map(|(q, p)| (q.clone(), *p)).collect();
        let violations = guard_no_query_leak(&rows, &pools);
        if !violations.is_empty() {
            return Err(CoreError::Leakage(format!(
                "seed {}: queries span partitions: {}",
                manifest.seed,
                violations.join(", ")
            ))
            .into());
        }
        write_split(&paths.split(manifest.seed), manifest)?;
    }

    // pooled test query x seed rows (intersection variant)
    let mut test_sizes = Vec::new();
    for manifest in &manifests {
        for query_id in manifest.queries_in(Part::Test) {
            test_sizes.push(pools[&query_id].intersection.len());
        }
    }
    let mut stats_rows = Vec::new();
    for variant in [PoolVariant::Raw, PoolVariant::ValidA, PoolVariant::ValidB, PoolVariant::Intersection] {
        let sizes = sizes_over_queries(&pools, variant);
        if !sizes.is_empty() {
            stats_rows.push(("queries".to_string(), pool_stats(&sizes, variant)?));
        }
    }
    if !test_sizes.is_empty() {
        stats_rows.push(("test_rows".to_string(), pool_stats(&test_sizes, PoolVariant::Intersection)?));
    }
    report::write_pool_stats_csv(&paths.pool_stats_csv(), &stats_rows, cfg)?;
    Ok(manifests)
}

fn train_config_for(cfg: &RunConfig, loss: LossKind, seed: u64) -> TrainConfig {
    TrainConfig {
        loss,
        hidden: cfg.train.hidden,
        learning_rate: cfg.train.learning_rate,
        batch: cfg.train.batch,
        max_epochs: cfg.train.max_epochs,
        patience: cfg.train.patience,
        pair_cap: cfg.train.pair_cap,
        train_fraction: cfg.train.train_fraction,
        seed,
    }
}

/// Train every trainable method for the requested seeds. Supervision is
/// whatever the config names, which the vault refuses unless it is
/// Judge B.
pub fn stage_train(
    cfg: &RunConfig,
    paths: &RunPaths,
    methods: &[String],
    seeds: &[u64],
) -> Result<()> {
    let trainable: Vec<&String> =
        methods.iter().filter(|m| method_needs_training(m)).collect();
    if trainable.is_empty() {
        return Ok(());
    }
    let (store, _) = load_store(cfg, paths)?;
    let pools = build_pools(&store);
    let table = load_table(cfg)?;
    let vault = build_vault(&store);
    let supervision_judge = judge_from(&cfg.judges.supervision);

    for &seed in seeds {
        let manifest = load_manifest(paths, seed)?;
        for method in &trainable {
            match method.as_str() {
                "pointwise" | "pairwise" | "listmle" => {
                    let loss = match method.as_str() {
                        "pointwise" => LossKind::Pointwise,
                        "pairwise" => LossKind::Pairwise,
                        _ => LossKind::Listmle,
                    };
                    let view = vault.open_supervision_as(supervision_judge, Phase::Train)?;
                    let tc = train_config_for(cfg, loss, seed);
                    let (params, trace) = neural::train(&tc, &manifest, &pools, &table, &view)?;
                    write_mlp_checkpoint(
                        &paths.checkpoint(method, seed),
                        &params,
                        table.dim(),
                        loss.name(),
                        seed,
                    )?;
                    report::write_trace_csv(&paths.trace(method, seed), &trace)?;
                }
                "distill" => {
                    let teacher = load_teacher_scores(cfg)?;
                    let dc = DistillConfig {
                        proj_dim: (cfg.distill.proj_dim > 0).then_some(cfg.distill.proj_dim),
                        learning_rate: cfg.distill.learning_rate,
                        batch: cfg.distill.batch,
                        max_epochs: cfg.distill.max_epochs,
                        patience: cfg.distill.patience,
                        seed,
                    };
                    let (student, trace) =
                        distill::train_student(&dc, &manifest, &pools, &table, &teacher)?;
                    write_student_checkpoint(&paths.checkpoint(method, seed), &student, seed)?;
                    report::write_trace_csv(&paths.trace(method, seed), &trace)?;
                }
                other => bail!("method {other} is not trainable"),
            }
        }
    }
    append_audit(&paths.audit(), &vault.audit_report())?;
    Ok(())
}

fn corpus_collection_stats(store: &CorpusStore) -> CollectionStats {
    let mut coll = CollectionStats::default();
    for story in store.stories().values() {
        coll.add_doc(&DocStats::from_text(&story.text));
    }
    coll
}

/// Rank the intersection pool of every test query with one method.
fn rank_method(
    cfg: &RunConfig,
    paths: &RunPaths,
    store: &CorpusStore,
    pools: &BTreeMap<QueryId, PoolSet>,
    vault: &LabelVault,
    table: Option<&EmbeddingTable>,
    method: &str,
    seed: u64,
    test_queries: &[QueryId],
) -> Result<Vec<PredictionRecord>> {
    let corpus_coll = (cfg.lexical.collection == "corpus").then(|| corpus_collection_stats(store));
    let needs_table = || {
        table.ok_or_else(|| anyhow!("method {method} needs embeddings but none are configured"))
    };

    let intersection_of = |query_id: &QueryId| {
        pools
            .get(query_id)
            .map(|set| &set.intersection)
            .ok_or_else(|| anyhow!("no pools for query {query_id}"))
    };

    // B-Score reads grades through the audited supervision view (legal
    // in the rank phase), so it ranks sequentially; every other scorer
    // is pure and fans out per query.
    if method == "bscore" {
        let view = vault.open_supervision_as(judge_from(&cfg.judges.supervision), Phase::Rank)?;
        let per_query: Vec<(QueryId, Vec<Scored>)> = test_queries
            .iter()
            .map(|q| Ok((q.clone(), rank_bscore(intersection_of(q)?, &view)?)))
            .collect::<Result<_>>()?;
        return Ok(to_prediction_records(per_query));
    }

    enum Scorer<'a> {
        Random,
        Lexical(&'a str),
        Cosine(&'a EmbeddingTable),
        Mlp(nrank_core::neural::MlpParams, &'a EmbeddingTable),
        Student(nrank_core::distill::StudentProjection, &'a EmbeddingTable),
    }
    let scorer = match method {
        "random" => Scorer::Random,
        "bm25" | "dph" | "dirichlet" => Scorer::Lexical(method),
        "cosine" => Scorer::Cosine(needs_table()?),
        "pointwise" | "pairwise" | "listmle" => {
            Scorer::Mlp(read_mlp_checkpoint(&paths.checkpoint(method, seed))?, needs_table()?)
        }
        "distill" => Scorer::Student(
            read_student_checkpoint(&paths.checkpoint(method, seed))?,
            needs_table()?,
        ),
        other => bail!("unknown method {other}"),
    };

    let rank_one = |query_id: &QueryId| -> Result<Vec<Scored>> {
        let pool = intersection_of(query_id)?;
        let ranked = match &scorer {
            Scorer::Random => rank_random(pool, seed)?,
            Scorer::Lexical(kind) => {
                let query = store
                    .query(query_id)
                    .ok_or_else(|| anyhow!("unknown query {query_id}"))?;
                let pq = PseudoQuery::from_query(query);
                let docs = pool.members.iter().map(|id| {
                    (id.clone(), store.story(id).map(|s| s.text.as_str()).unwrap_or(""))
                });
                let index = match &corpus_coll {
                    Some(coll) => PoolIndex::with_collection(docs, coll.clone()),
                    None => PoolIndex::build(docs),
                };
                match *kind {
                    "bm25" => rank_bm25(&pq, &index, cfg.lexical.k1, cfg.lexical.b)?,
                    "dph" => rank_dph(&pq, &index),
                    _ => rank_dirichlet(&pq, &index, cfg.lexical.mu)?,
                }
            }
            Scorer::Cosine(table) => rank_cosine(table.require(query_id)?, pool, table)?,
            Scorer::Mlp(params, table) => {
                let scored = pool
                    .members
                    .iter()
                    .map(|sid| {
                        Ok(Scored {
                            story_id: sid.clone(),
                            score: neural::score_pair(params, table, query_id, sid)?,
                        })
                    })
                    .collect::<nrank_core::Result<Vec<_>>>()?;
                nrank_core::lexical::sort_scored(scored)
            }
            Scorer::Student(student, table) => {
                distill::rank_student(student, query_id, pool, table)?
            }
        };
        Ok(ranked)
    };

    let mut per_query: Vec<(QueryId, Vec<Scored>)> = test_queries
        .par_iter()
        .map(|q| Ok((q.clone(), rank_one(q)?)))
        .collect::<Result<_>>()?;
    per_query.sort_by(|a, b| a.0.cmp(&b.0));

    Ok(to_prediction_records(per_query))
}

fn to_prediction_records(per_query: Vec<(QueryId, Vec<Scored>)>) -> Vec<PredictionRecord> {
    let mut records = Vec::new();
    for (query_id, ranked) in per_query {
        for (i, s) in ranked.into_iter().enumerate() {
            records.push(PredictionRecord {
                query_id: query_id.clone(),
                story_id: s.story_id,
                score: s.score,
                rank: i + 1,
            });
        }
    }
    records
}

/// Produce prediction files for every (method, seed).
pub fn stage_rank(
    cfg: &RunConfig,
    paths: &RunPaths,
    methods: &[String],
    seeds: &[u64],
) -> Result<()> {
    let (store, _) = load_store(cfg, paths)?;
    let pools = build_pools(&store);
    let vault = build_vault(&store);
    let table = if methods.iter().any(|m| method_needs_embeddings(m)) {
        Some(load_table(cfg)?)
    } else {
        None
    };
    for &seed in seeds {
        let manifest = load_manifest(paths, seed)?;
        let test_queries = manifest.queries_in(Part::Test);
        for method in methods {
            let records = rank_method(
                cfg,
                paths,
                &store,
                &pools,
                &vault,
                table.as_ref(),
                method,
                seed,
                &test_queries,
            )?;
            write_predictions(&paths.predictions(method, seed), &records)?;
        }
    }
    append_audit(&paths.audit(), &vault.audit_report())?;
    Ok(())
}

/// Check that every method ranked the identical candidate id-set per
/// (query, seed). Returns human-readable mismatches.
pub fn verify_alignment(paths: &RunPaths, methods: &[String], seeds: &[u64]) -> Result<Vec<String>> {
    let mut mismatches = Vec::new();
    for &seed in seeds {
        let mut reference: Option<(String, BTreeMap<QueryId, Vec<StoryId>>)> = None;
        for method in methods {
            let records = read_predictions(&paths.predictions(method, seed))?;
            let mut sets: BTreeMap<QueryId, Vec<StoryId>> = BTreeMap::new();
            for r in records {
                sets.entry(r.query_id).or_default().push(r.story_id);
            }
            for ids in sets.values_mut() {
                ids.sort_unstable();
            }
            match &reference {
                None => reference = Some((method.clone(), sets)),
                Some((ref_method, ref_sets)) => {
                    for (query_id, ids) in &sets {
                        if ref_sets.get(query_id) != Some(ids) {
                            mismatches.push(format!(
                                "method {method} seed {seed} query {query_id}: candidate set differs from {ref_method}"
                            ));
                        }
                    }
                    for query_id in ref_sets.keys() {
                        if !sets.contains_key(query_id) {
                            mismatches.push(format!(
                                "method {method} seed {seed} query {query_id}: missing from predictions"
                            ));
                        }
                    }
                }
            }
        }
    }
    Ok(mismatches)
}

/// Compute per-query metrics from stored predictions under the
/// evaluation view. Honest runs read Judge A; the leaky override reads
/// Judge B and poisons downstream reports.
pub fn stage_eval(
    cfg: &RunConfig,
    paths: &RunPaths,
    methods: &[String],
    seeds: &[u64],
) -> Result<Vec<EvalRow>> {
    let mismatches = verify_alignment(paths, methods, seeds)?;
    if let Some(first) = mismatches.first() {
        return Err(CoreError::Alignment(format!(
            "{first} (+{} more)",
            mismatches.len() - 1
        ))
        .into());
    }

    let (store, _) = load_store(cfg, paths)?;
    let vault = build_vault(&store);
    let eval_judge = judge_from(&cfg.judges.evaluation);
    let view = if eval_judge == Judge::B {
        if !cfg.judges.allow_leaky {
            return Err(CoreError::Leakage(
                "evaluating against supervision labels requires judges.allow_leaky = true".into(),
            )
            .into());
        }
        vault.open_leaky_evaluation(Phase::Evaluate, LeakyOverride::acknowledged())?
    } else {
        vault.open_evaluation_as(eval_judge, Phase::Evaluate)?
    };
    let grades = view.snapshot();

    let k = cfg.run.k;
    let mut rows = Vec::new();
    for method in methods {
        for &seed in seeds {
            let records = read_predictions(&paths.predictions(method, seed))?;
            let mut by_query: BTreeMap<QueryId, Vec<(usize, StoryId, f64)>> = BTreeMap::new();
            for r in records {
                by_query.entry(r.query_id).or_default().push((r.rank, r.story_id, r.score));
            }
            let query_rows: Vec<Vec<EvalRow>> = by_query
                .par_iter()
                .map(|(query_id, entries)| {
                    let mut entries = entries.clone();
                    entries.sort_by_key(|(rank, _, _)| *rank);
                    let ranked: Vec<StoryId> =
                        entries.iter().map(|(_, id, _)| id.clone()).collect();
                    let scores: Vec<f64> = entries.iter().map(|(_, _, s)| *s).collect();
                    let grade_vals: Vec<f64> = ranked
                        .iter()
                        .map(|id| {
                            grades
                                .get(id)
                                .map(|g| g.get() as f64)
                                .ok_or_else(|| CoreError::Data(format!("no evaluation grade for {id}")))
                        })
                        .collect::<nrank_core::Result<_>>()?;
                    let pool_size = ranked.len();
                    let make = |metric: String, value: Option<f64>| EvalRow {
                        query_id: query_id.clone(),
                        seed,
                        method: method.clone(),
                        metric,
                        value,
                        pool_size,
                    };
                    let (tau, rho) = if pool_size >= 2 {
                        (kendall_tau_b(&scores, &grade_vals)?, spearman_rho(&scores, &grade_vals)?)
                    } else {
                        (None, None)
                    };
                    Ok(vec![
                        make(format!("ndcg@{k}"), Some(ndcg_at_k(&ranked, &grades, k)?)),
                        make(format!("err@{k}"), Some(err_at_k(&ranked, &grades, k)?)),
                        make("tau_b".into(), tau),
                        make("rho".into(), rho),
                    ])
                })
                .collect::<Result<_, CoreError>>()?;
            rows.extend(query_rows.into_iter().flatten());
        }
    }
    write_eval_rows(&paths.eval_rows(), &rows)?;
    append_audit(&paths.audit(), &vault.audit_report())?;
    Ok(rows)
}

/// Reload stored rankings for the k-sweep.
pub fn load_ranked_lists(
    paths: &RunPaths,
    methods: &[String],
    seeds: &[u64],
) -> Result<Vec<nrank_core::stats::RankedList>> {
    let mut lists = Vec::new();
    for method in methods {
        for &seed in seeds {
            let records = read_predictions(&paths.predictions(method, seed))?;
            let mut by_query: BTreeMap<QueryId, Vec<(usize, StoryId)>> = BTreeMap::new();
            for r in records {
                by_query.entry(r.query_id).or_default().push((r.rank, r.story_id));
            }
            for (query_id, mut entries) in by_query {
                entries.sort_by_key(|(rank, _)| *rank);
                lists.push(nrank_core::stats::RankedList {
                    method: method.clone(),
                    seed,
                    query_id,
                    ranked: entries.into_iter().map(|(_, id)| id).collect(),
                });
            }
        }
    }
    Ok(lists)
}

/// Evaluation-grade snapshot for report-phase recomputations.
pub fn eval_grades_for_report(
    cfg: &RunConfig,
    paths: &RunPaths,
) -> Result<BTreeMap<StoryId, Grade>> {
    let (store, _) = load_store(cfg, paths)?;
    let vault = build_vault(&store);
    let view = if judge_from(&cfg.judges.evaluation) == Judge::B {
        if !cfg.judges.allow_leaky {
            return Err(CoreError::Leakage(
                "evaluating against supervision labels requires judges.allow_leaky = true".into(),
            )
            .into());
        }
        vault.open_leaky_evaluation(Phase::Report, LeakyOverride::acknowledged())?
    } else {
        vault.open_evaluation(Phase::Report)?
    };
    let grades = view.snapshot();
    append_audit(&paths.audit(), &vault.audit_report())?;
    Ok(grades)
}

/// Full pipeline, in order, into the config-addressed run directory.
/// Rerunning with the same config rewrites every artifact byte for
/// byte.
pub fn run_all(cfg: &RunConfig, dir: Option<PathBuf>) -> Result<RunPaths> {
    cfg.validate()?;
    let paths = RunPaths::new(dir.unwrap_or_else(|| cfg.run_dir()));
    std::fs::create_dir_all(&paths.dir)?;
    cfg.save(&paths.config())?;
    // fresh audit per run so reruns stay byte-identical
    let _ = std::fs::remove_file(paths.audit());

    stage_ingest(cfg, &paths)?;
    stage_pools(cfg, &paths)?;
    stage_split(cfg, &paths)?;
    stage_train(cfg, &paths, &cfg.run.methods, &cfg.run.seeds)?;
    stage_rank(cfg, &paths, &cfg.run.methods, &cfg.run.seeds)?;
    let rows = stage_eval(cfg, &paths, &cfg.run.methods, &cfg.run.seeds)?;
    report::write_summaries(cfg, &paths, &rows)?;
    report::write_sigtests(cfg, &paths, &rows)?;
    report::write_bins(cfg, &paths, &rows)?;
    let lists = load_ranked_lists(&paths, &cfg.run.methods, &cfg.run.seeds)?;
    let grades = eval_grades_for_report(cfg, &paths)?;
    report::write_ksweep(cfg, &paths, &lists, &grades)?;
    report::write_main_table(cfg, &paths, &rows)?;

    let verdict = verify(cfg, &paths)?;
    if !verdict.clean() {
        bail!("post-run verification failed:\n{}", verdict.describe());
    }
    Ok(paths)
}

/// What `verify` checks from the stored artifacts alone.
#[derive(Debug, Default)]
pub struct VerifyReport {
    pub alignment_mismatches: Vec<String>,
    pub audit_violations: Vec<String>,
    pub split_violations: Vec<String>,
}

impl VerifyReport {
    pub fn clean(&self) -> bool {
        self.alignment_mismatches.is_empty()
            && self.audit_violations.is_empty()
            && self.split_violations.is_empty()
    }

    pub fn describe(&self) -> String {
        let mut out = String::new();
        for m in &self.alignment_mismatches {
            out.push_str(&format!("alignment: {m}\n"));
        }
        for m in &self.audit_violations {
            out.push_str(&format!("audit: {m}\n"));
        }
        for m in &self.split_violations {
            out.push_str(&format!("splits: {m}\n"));
        }
        out
    }
}

/// Alignment + leakage audit + split guards, from files.
pub fn verify(cfg: &RunConfig, paths: &RunPaths) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    report.alignment_mismatches = verify_alignment(paths, &cfg.run.methods, &cfg.run.seeds)?;

    if paths.audit().exists() {
        for row in crate::formats::read_audit(&paths.audit())? {
            if row.judge == Judge::A && !row.phase.allows_evaluation() {
                report.audit_violations.push(format!(
                    "{} Judge-A reads logged in phase {}",
                    row.count,
                    row.phase.name()
                ));
            }
        }
    }

    let (store, _) = load_store(cfg, paths)?;
    let pools = build_pools(&store);
    let sizes = (cfg.run.sizes[0], cfg.run.sizes[1], cfg.run.sizes[2]);
    for &seed in &cfg.run.seeds {
        let rows = crate::formats::read_split_rows(&paths.split(seed))?;
        let violations = guard_no_query_leak(&rows, &pools);
        if !violations.is_empty() {
            report
                .split_violations
                .push(format!("seed {seed}: queries span partitions: {}", violations.join(", ")));
        }
        let manifest = load_manifest(paths, seed)?;
        let counts = (
            manifest.queries_in(Part::Train).len(),
            manifest.queries_in(Part::Dev).len(),
            manifest.queries_in(Part::Test).len(),
        );
        if counts != sizes {
            report.split_violations.push(format!(
                "seed {seed}: partition sizes {counts:?} != configured {sizes:?}"
            ));
        }
    }
    Ok(report)
}

/// Write the two label files in store-normalised form plus latent truth
/// and run-ready side inputs for a synthetic corpus.
pub fn write_synth_dir(dir: &Path, cfg: &nrank_core::synth::SynthConfig) -> Result<()> {
    let out = nrank_core::synth::generate(cfg)?;
    crate::formats::write_synth_output(dir, &out)?;
    std::fs::write(dir.join("synth_config.toml"), toml::to_string_pretty(cfg)?)?;
    Ok(())
}

/// Convenience: a run config whose inputs point at a synthetic data
/// directory.
pub fn synth_run_config(data_dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.inputs.stories = Some(data_dir.join("stories.jsonl"));
    cfg.inputs.labels_a = Some(data_dir.join("labels_a.jsonl"));
    cfg.inputs.labels_b = Some(data_dir.join("labels_b.jsonl"));
    cfg.inputs.embeddings = vec![data_dir.join("embeddings.jsonl")];
    cfg.inputs.teacher = Some(data_dir.join("teacher_scores.jsonl"));
    cfg
}

/// Re-derive the report family from stored rows (the `report`
/// subcommand).
pub fn regenerate_reports(cfg: &RunConfig, paths: &RunPaths) -> Result<()> {
    let rows = read_eval_rows(&paths.eval_rows())?;
    report::write_summaries(cfg, paths, &rows)?;
    report::write_sigtests(cfg, paths, &rows)?;
    report::write_bins(cfg, paths, &rows)?;
    let lists = load_ranked_lists(paths, &cfg.run.methods, &cfg.run.seeds)?;
    let grades = eval_grades_for_report(cfg, paths)?;
    report::write_ksweep(cfg, paths, &lists, &grades)?;
    report::write_main_table(cfg, paths, &rows)?;
    Ok(())
}

/// Map an error to the CLI exit code contract: 3 data, 4 leakage, 5
/// alignment.
pub fn exit_code_for(err: &anyhow::Error) -> i32 {
    if let Some(core) = err.downcast_ref::<CoreError>() {
        return match core {
            CoreError::Leakage(_) => 4,
            CoreError::Alignment(_) => 5,
            _ => 3,
        };
    }
    3
}

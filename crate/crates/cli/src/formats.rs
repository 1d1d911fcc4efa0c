//! On-disk schemas: stories, labels, pools, splits, predictions, eval
//! rows, embeddings (JSONL and binary), teacher scores, checkpoints,
//! audit summaries. All text files are UTF-8 JSONL with LF endings.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use nrank_core::corpus::{CorpusStats, CorpusStore, Judge, JudgeLabel, Query};
use nrank_core::distill::{StudentProjection, TeacherScores};
use nrank_core::embed::EmbeddingTable;
use nrank_core::neural::MlpParams;
use nrank_core::pools::{PoolSet, PoolVariant};
use nrank_core::splits::{Part, SplitManifest};
use nrank_core::stats::EvalRow;
use nrank_core::synth::SynthOutput;
use nrank_core::vault::AuditSummaryRow;
use nrank_core::{QueryId, StoryId};

use crate::jsonl::{read_jsonl, write_jsonl};

/// stories.jsonl: the query triple is stored inline; query_id is derived
/// on ingest, never stored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoryRecord {
    pub story_id: StoryId,
    pub age: u8,
    pub moral: String,
    pub culture: String,
    pub text: String,
}

/// labels_<judge>.jsonl: either a raw judge output or a bare score.
/// `raw` takes precedence when both are present.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelRecord {
    pub story_id: StoryId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<i64>,
}

impl LabelRecord {
    /// Normalise to a [`JudgeLabel`]. Score-only records synthesise the
    /// canonical raw string so the grade <-> raw invariant holds.
    pub fn into_label(self, judge: Judge) -> JudgeLabel {
        let raw = match (self.raw, self.score) {
            (Some(raw), _) => raw,
            (None, Some(score)) => format!("{{\"score\": {score}}}"),
            (None, None) => String::new(),
        };
        JudgeLabel::from_raw(self.story_id, judge, raw)
    }

    pub fn from_label(label: &JudgeLabel) -> LabelRecord {
        LabelRecord { story_id: label.story_id.clone(), raw: Some(label.raw_output.clone()), score: None }
    }
}

pub fn read_stories(path: &Path) -> Result<Vec<(StoryId, Query, String)>> {
    let records: Vec<StoryRecord> = read_jsonl(path)?;
    records
        .into_iter()
        .map(|r| {
            let query = Query::new(r.age, &r.moral, &r.culture)
                .with_context(|| format!("story {}", r.story_id))?;
            Ok((r.story_id, query, r.text))
        })
        .collect()
}

pub fn write_stories(path: &Path, stories: &[(StoryId, Query, String)]) -> Result<()> {
    write_jsonl(
        path,
        stories.iter().map(|(id, q, text)| StoryRecord {
            story_id: id.clone(),
            age: q.age,
            moral: q.moral.clone(),
            culture: q.culture.clone(),
            text: text.clone(),
        }),
    )
}

pub fn read_labels(path: &Path, judge: Judge) -> Result<Vec<JudgeLabel>> {
    let records: Vec<LabelRecord> = read_jsonl(path)?;
    Ok(records.into_iter().map(|r| r.into_label(judge)).collect())
}

pub fn write_labels(path: &Path, labels: &[JudgeLabel]) -> Result<()> {
    write_jsonl(path, labels.iter().map(LabelRecord::from_label))
}

/// Ingest the three corpus files into an indexed store plus stats.
pub fn ingest(
    stories_path: &Path,
    labels_a_path: &Path,
    labels_b_path: &Path,
) -> Result<(CorpusStore, CorpusStats)> {
    let stories = read_stories(stories_path)?;
    let labels_a = read_labels(labels_a_path, Judge::A)?;
    let labels_b = read_labels(labels_b_path, Judge::B)?;
    Ok(CorpusStore::build(stories, labels_a, labels_b)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolRecord {
    pub query_id: QueryId,
    pub variant: PoolVariant,
    pub members: Vec<StoryId>,
}

pub fn write_pools(path: &Path, pools: &BTreeMap<QueryId, PoolSet>) -> Result<()> {
    let mut records = Vec::new();
    for set in pools.values() {
        for variant in [PoolVariant::Raw, PoolVariant::ValidA, PoolVariant::ValidB, PoolVariant::Intersection] {
            let pool = set.get(variant);
            records.push(PoolRecord {
                query_id: pool.query_id.clone(),
                variant,
                members: pool.members.clone(),
            });
        }
    }
    write_jsonl(path, records)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitRecord {
    pub query_id: QueryId,
    pub part: Part,
}

pub fn write_split(path: &Path, manifest: &SplitManifest) -> Result<()> {
    write_jsonl(
        path,
        manifest
            .assignment
            .iter()
            .map(|(q, p)| SplitRecord { query_id: q.clone(), part: *p }),
    )
}

pub fn read_split_rows(path: &Path) -> Result<Vec<(QueryId, Part)>> {
    let records: Vec<SplitRecord> = read_jsonl(path)?;
    Ok(records.into_iter().map(|r| (r.query_id, r.part)).collect())
}

pub fn read_split(path: &Path, seed: u64) -> Result<SplitManifest> {
    let rows = read_split_rows(path)?;
    let mut assignment = BTreeMap::new();
    for (query_id, part) in rows {
        if assignment.insert(query_id.clone(), part).is_some() {
            bail!("{}: query {query_id} assigned twice", path.display());
        }
    }
    Ok(SplitManifest { seed, assignment })
}

/// predictions: one ranked row per candidate, rank 1-based per query.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub query_id: QueryId,
    pub story_id: StoryId,
    pub score: f64,
    pub rank: usize,
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    write_jsonl(path, records.iter().cloned())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    read_jsonl(path)
}

pub fn write_eval_rows(path: &Path, rows: &[EvalRow]) -> Result<()> {
    write_jsonl(path, rows.iter().cloned())
}

pub fn read_eval_rows(path: &Path) -> Result<Vec<EvalRow>> {
    read_jsonl(path)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub vec: Vec<f64>,
}

/// Magic bytes of the binary embedding format.
pub const EMBED_MAGIC: &[u8; 4] = b"NREM";

/// Load embeddings from JSONL ({"id", "vec"}) or the binary format
/// (magic "NREM", u32 LE dim, then [u16 LE id-len, id bytes, dim f32
/// LE] records), sniffed by magic.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let mut file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut magic = [0u8; 4];
    let is_binary = match file.read_exact(&mut magic) {
        Ok(()) => &magic == EMBED_MAGIC,
        Err(_) => false,
    };
    if is_binary {
        return read_embeddings_binary(path);
    }
    let records: Vec<EmbeddingRecord> = read_jsonl(path)?;
    if records.is_empty() {
        bail!("{}: empty embedding file", path.display());
    }
    let mut table = EmbeddingTable::new(records[0].vec.len())
        .with_context(|| format!("{}", path.display()))?;
    for r in records {
        table.insert(r.id, r.vec).with_context(|| format!("{}", path.display()))?;
    }
    Ok(table)
}

pub fn write_embeddings_jsonl(path: &Path, table: &EmbeddingTable) -> Result<()> {
    write_jsonl(
        path,
        table.iter().map(|(id, vec)| EmbeddingRecord { id: id.clone(), vec: vec.clone() }),
    )
}

pub fn write_embeddings_binary(path: &Path, table: &EmbeddingTable) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(EMBED_MAGIC)?;
    w.write_all(&(table.dim() as u32).to_le_bytes())?;
    for (id, vec) in table.iter() {
        let bytes = id.as_bytes();
        if bytes.len() > u16::MAX as usize {
            bail!("embedding id too long for binary format: {id}");
        }
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
        for &x in vec {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_embeddings_binary(path: &Path) -> Result<EmbeddingTable> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != EMBED_MAGIC {
        bail!("{}: missing NREM magic", path.display());
    }
    let mut dim_bytes = [0u8; 4];
    r.read_exact(&mut dim_bytes)?;
    let dim = u32::from_le_bytes(dim_bytes) as usize;
    let mut table = EmbeddingTable::new(dim)?;
    loop {
        let mut len_bytes = [0u8; 2];
        match r.read_exact(&mut len_bytes) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let id_len = u16::from_le_bytes(len_bytes) as usize;
        let mut id_bytes = vec![0u8; id_len];
        r.read_exact(&mut id_bytes)?;
        let id = String::from_utf8(id_bytes).context("embedding id is not UTF-8")?;
        let mut vec = Vec::with_capacity(dim);
        let mut f32_bytes = [0u8; 4];
        for _ in 0..dim {
            r.read_exact(&mut f32_bytes)?;
            vec.push(f32::from_le_bytes(f32_bytes) as f64);
        }
        table.insert(id, vec)?;
    }
    Ok(table)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TeacherRecord {
    pub query_id: QueryId,
    pub story_id: StoryId,
    pub logit: f64,
}

pub fn read_teacher(path: &Path) -> Result<TeacherScores> {
    let records: Vec<TeacherRecord> = read_jsonl(path)?;
    let mut teacher = TeacherScores::new();
    for r in records {
        teacher.insert(r.query_id, r.story_id, r.logit)?;
    }
    Ok(teacher)
}

pub fn write_teacher(path: &Path, teacher: &TeacherScores) -> Result<()> {
    write_jsonl(
        path,
        teacher.iter().map(|((q, s), logit)| TeacherRecord {
            query_id: q.clone(),
            story_id: s.clone(),
            logit: *logit,
        }),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatentRecord {
    pub story_id: StoryId,
    pub r_star: f64,
}

/// Checkpoint header line; the f32 LE parameter blob follows the
/// newline. `dim` is the embedding dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub dim: usize,
    pub hidden: usize,
    pub loss: String,
    pub seed: u64,
    pub n_params: usize,
}

fn write_checkpoint(path: &Path, header: &CheckpointHeader, params: &[f64]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, header)?;
    w.write_all(b"\n")?;
    for &x in params {
        w.write_all(&(x as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, Vec<f64>)> {
    let mut bytes = Vec::new();
    File::open(path)
        .with_context(|| format!("opening {}", path.display()))?
        .read_to_end(&mut bytes)?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .with_context(|| format!("{}: missing checkpoint header", path.display()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..newline])?;
    let blob = &bytes[newline + 1..];
    if blob.len() != header.n_params * 4 {
        bail!(
            "{}: blob holds {} bytes, header expects {} params",
            path.display(),
            blob.len(),
            header.n_params
        );
    }
    let params = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok((header, params))
}

pub fn write_mlp_checkpoint(
    path: &Path,
    params: &MlpParams,
    dim: usize,
    loss: &str,
    seed: u64,
) -> Result<()> {
    let header = CheckpointHeader {
        kind: "mlp".into(),
        dim,
        hidden: params.hidden,
        loss: loss.into(),
        seed,
        n_params: params.flat().len(),
    };
    write_checkpoint(path, &header, params.flat())
}

pub fn read_mlp_checkpoint(path: &Path) -> Result<MlpParams> {
    let (header, params) = read_checkpoint(path)?;
    if header.kind != "mlp" {
        bail!("{}: checkpoint kind {} is not an MLP", path.display(), header.kind);
    }
    Ok(MlpParams::from_flat(2 * header.dim, header.hidden, params)?)
}

pub fn write_student_checkpoint(path: &Path, student: &StudentProjection, seed: u64) -> Result<()> {
    let header = CheckpointHeader {
        kind: "projection".into(),
        dim: student.in_dim,
        hidden: student.out_dim,
        loss: "distill".into(),
        seed,
        n_params: student.p.len(),
    };
    write_checkpoint(path, &header, &student.p)
}

pub fn read_student_checkpoint(path: &Path) -> Result<StudentProjection> {
    let (header, params) = read_checkpoint(path)?;
    if header.kind != "projection" {
        bail!("{}: checkpoint kind {} is not a projection", path.display(), header.kind);
    }
    Ok(StudentProjection { out_dim: header.hidden, in_dim: header.dim, p: params })
}

pub fn append_audit(path: &Path, rows: &[AuditSummaryRow]) -> Result<()> {
    if rows.is_empty() {
        return Ok(());
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    for row in rows {
        serde_json::to_writer(&mut file, row)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_audit(path: &Path) -> Result<Vec<AuditSummaryRow>> {
    read_jsonl(path)
}

/// Write a synthetic corpus in exactly the ingestion formats, plus the
/// latent truth, embeddings, and teacher logits.
pub fn write_synth_output(dir: &Path, out: &SynthOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_stories(&dir.join("stories.jsonl"), &out.stories)?;
    write_labels(&dir.join("labels_a.jsonl"), &out.labels_a)?;
    write_labels(&dir.join("labels_b.jsonl"), &out.labels_b)?;
    write_jsonl(
        &dir.join("latent.jsonl"),
        out.latent.iter().map(|(id, r)| LatentRecord { story_id: id.clone(), r_star: *r }),
    )?;
    write_embeddings_jsonl(&dir.join("embeddings.jsonl"), &out.embeddings)?;
    write_teacher(&dir.join("teacher_scores.jsonl"), &out.teacher)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nrank_core::synth::{generate, SynthConfig};
    use tempfile::tempdir;

    #[test]
    fn label_record_normalisation() {
        let raw = LabelRecord { story_id: "s".into(), raw: Some(r#"{"score": 4}"#.into()), score: None };
        assert_eq!(raw.into_label(Judge::A).grade.map(|g| g.get()), Some(4));
        let score_only = LabelRecord { story_id: "s".into(), raw: None, score: Some(3) };
        assert_eq!(score_only.into_label(Judge::B).grade.map(|g| g.get()), Some(3));
        let out_of_range = LabelRecord { story_id: "s".into(), raw: None, score: Some(9) };
        assert_eq!(out_of_range.into_label(Judge::B).grade, None);
        let null = LabelRecord { story_id: "s".into(), raw: None, score: None };
        assert_eq!(null.into_label(Judge::A).grade, None);
        // raw wins over score
        let both = LabelRecord {
            story_id: "s".into(),
            raw: Some("garbage".into()),
            score: Some(4),
        };
        assert_eq!(both.into_label(Judge::A).grade, None);
    }

    #[test]
    fn corpus_roundtrip_preserves_stats_and_ids() {
        let dir = tempdir().unwrap();
        let out = generate(&SynthConfig { n_queries: 6, ..SynthConfig::default() }).unwrap();
        write_synth_output(dir.path(), &out).unwrap();
        let (store1, stats1) = ingest(
            &dir.path().join("stories.jsonl"),
            &dir.path().join("labels_a.jsonl"),
            &dir.path().join("labels_b.jsonl"),
        )
        .unwrap();

        // serialise the indexed store back out, re-ingest, compare
        let stories: Vec<_> = store1
            .stories()
            .values()
            .map(|s| {
                let q = store1.query(&s.query_id).unwrap().clone();
                (s.story_id.clone(), q, s.text.clone())
            })
            .collect();
        let labels = |j| store1.labels(j).values().cloned().collect::<Vec<_>>();
        write_stories(&dir.path().join("rt_stories.jsonl"), &stories).unwrap();
        write_labels(&dir.path().join("rt_a.jsonl"), &labels(Judge::A)).unwrap();
        write_labels(&dir.path().join("rt_b.jsonl"), &labels(Judge::B)).unwrap();
        let (store2, stats2) = ingest(
            &dir.path().join("rt_stories.jsonl"),
            &dir.path().join("rt_a.jsonl"),
            &dir.path().join("rt_b.jsonl"),
        )
        .unwrap();
        assert_eq!(stats1, stats2);
        assert_eq!(
            store1.stories().keys().collect::<Vec<_>>(),
            store2.stories().keys().collect::<Vec<_>>()
        );
        assert_eq!(store1.query_ids(), store2.query_ids());
    }

    #[test]
    fn embeddings_binary_and_jsonl_agree_to_f32() {
        let dir = tempdir().unwrap();
        let out = generate(&SynthConfig { n_queries: 3, ..SynthConfig::default() }).unwrap();
        let jsonl = dir.path().join("e.jsonl");
        let binary = dir.path().join("e.nrem");
        write_embeddings_jsonl(&jsonl, &out.embeddings).unwrap();
        write_embeddings_binary(&binary, &out.embeddings).unwrap();
        let from_jsonl = load_embeddings(&jsonl).unwrap();
        let from_binary = load_embeddings(&binary).unwrap();
        assert_eq!(from_jsonl.dim(), from_binary.dim());
        assert_eq!(from_jsonl.len(), from_binary.len());
        for (id, v) in from_jsonl.iter() {
            let w = from_binary.get(id).unwrap();
            for (a, b) in v.iter().zip(w) {
                assert!((a - b).abs() < 1e-7, "{id}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn binary_embeddings_are_bit_exact() {
        let dir = tempdir().unwrap();
        let mut table = EmbeddingTable::new(2).unwrap();
        table.insert("x".into(), vec![0.5, -1.25]).unwrap();
        let path = dir.path().join("e.bin");
        write_embeddings_binary(&path, &table).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let mut expect = Vec::new();
        expect.extend_from_slice(b"NREM");
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(&1u16.to_le_bytes());
        expect.extend_from_slice(b"x");
        expect.extend_from_slice(&0.5f32.to_le_bytes());
        expect.extend_from_slice(&(-1.25f32).to_le_bytes());
        assert_eq!(bytes, expect);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempdir().unwrap();
        let params = MlpParams::init(8, 4, 3);
        let path = dir.path().join("m.ckpt");
        write_mlp_checkpoint(&path, &params, 4, "pairwise", 3).unwrap();
        let loaded = read_mlp_checkpoint(&path).unwrap();
        assert_eq!(loaded.input, 8);
        assert_eq!(loaded.hidden, 4);
        for (a, b) in params.flat().iter().zip(loaded.flat()) {
            assert!((a - b).abs() < 1e-6);
        }

        let student = StudentProjection::init(5, 3, 1).unwrap();
        let spath = dir.path().join("s.ckpt");
        write_student_checkpoint(&spath, &student, 1).unwrap();
        let loaded = read_student_checkpoint(&spath).unwrap();
        assert_eq!((loaded.out_dim, loaded.in_dim), (3, 5));
    }

    #[test]
    fn malformed_jsonl_reports_line_number() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"story_id\": \"a\", \"raw\": \"x\"}\nnot json\n").unwrap();
        let err = read_labels(&path, Judge::A).unwrap_err();
        assert!(format!("{err:#}").contains(":2"), "{err:#}");
    }
}

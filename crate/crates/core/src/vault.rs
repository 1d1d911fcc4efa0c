//! Judge-label isolation as a capability discipline.
//!
//! Supervision code receives a [`SupervisionView`] and can resolve only
//! Judge-B grades; metric code receives an [`EvaluationView`] and can
//! resolve only Judge-A grades. Views are mintable only in the phases
//! where that judge's labels are legal, so the separation holds at the
//! type level *and* is re-checked at runtime: every grade access lands in
//! an append-only audit log which the pipeline scans to assert that no
//! Judge-A read happens before the evaluate phase.
//!
//! The one sanctioned exception is [`LabelVault::open_leaky_evaluation`],
//! which evaluates against supervision labels for the circularity
//! demonstration. It requires an explicit [`LeakyOverride`] token and
//! marks the view so every downstream report carries a LEAKY banner.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;
use core::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::corpus::{Grade, Judge};
use crate::error::{Error, Result};
use crate::StoryId;

/// Pipeline phases, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Train,
    DevSelect,
    Rank,
    Evaluate,
    Report,
    Agreement,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::DevSelect => "dev-select",
            Phase::Rank => "rank",
            Phase::Evaluate => "evaluate",
            Phase::Report => "report",
            Phase::Agreement => "agreement",
        }
    }

    /// Phases in which supervision (Judge-B) grades may be read.
    /// Rank is included so the B-Score oracle can sort by its own signal.
    pub fn allows_supervision(self) -> bool {
        matches!(self, Phase::Train | Phase::DevSelect | Phase::Rank)
    }

    /// Phases in which evaluation (Judge-A) grades may be read.
    pub fn allows_evaluation(self) -> bool {
        matches!(self, Phase::Evaluate | Phase::Report | Phase::Agreement)
    }
}

/// What a single audit entry covers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AuditTarget {
    Story(StoryId),
    /// A bulk snapshot of `n` grades.
    Bulk(usize),
}

/// One grade access.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub phase: Phase,
    pub judge: Judge,
    pub target: AuditTarget,
}

/// Chronological per-(phase, judge) access counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditSummaryRow {
    pub phase: Phase,
    pub judge: Judge,
    pub count: usize,
}

/// Explicit acknowledgement token for the leaky-evaluation demonstration.
///
/// Constructing one is the only way to evaluate against supervision
/// labels, and any run that does so is poisoned with a LEAKY banner.
#[derive(Debug, Clone, Copy)]
pub struct LeakyOverride;

impl LeakyOverride {
    pub fn acknowledged() -> LeakyOverride {
        LeakyOverride
    }
}

/// Holds both judges' valid grades behind role-gated views.
#[derive(Debug)]
pub struct LabelVault {
    grades_a: BTreeMap<StoryId, Grade>,
    grades_b: BTreeMap<StoryId, Grade>,
    audit: RefCell<Vec<AuditEntry>>,
}

impl LabelVault {
    /// Build from per-judge valid-grade maps (see
    /// [`crate::corpus::CorpusStore::valid_grades`]).
    pub fn new(grades_a: BTreeMap<StoryId, Grade>, grades_b: BTreeMap<StoryId, Grade>) -> LabelVault {
        LabelVault { grades_a, grades_b, audit: RefCell::new(Vec::new()) }
    }

    /// Mint a supervision capability. Only Judge B, only in supervision
    /// phases; anything else is a leakage violation.
    pub fn open_supervision(&self, phase: Phase) -> Result<SupervisionView<'_>> {
        self.open_supervision_as(Judge::B, phase)
    }

    /// As [`Self::open_supervision`], with the judge named explicitly so
    /// misconfigured pipelines fail here rather than silently swapping
    /// label sources.
    pub fn open_supervision_as(&self, judge: Judge, phase: Phase) -> Result<SupervisionView<'_>> {
        if judge != Judge::B {
            return Err(Error::Leakage(format!(
                "judge {} labels can never supervise; supervision is Judge B only",
                judge.name()
            )));
        }
        if !phase.allows_supervision() {
            return Err(Error::Leakage(format!(
                "supervision labels are not readable in phase {}",
                phase.name()
            )));
        }
        Ok(SupervisionView { vault: self, phase })
    }

    /// Mint an evaluation capability. Only Judge A, only in evaluation
    /// phases.
    pub fn open_evaluation(&self, phase: Phase) -> Result<EvaluationView<'_>> {
        self.open_evaluation_as(Judge::A, phase)
    }

    pub fn open_evaluation_as(&self, judge: Judge, phase: Phase) -> Result<EvaluationView<'_>> {
        if judge != Judge::A {
            return Err(Error::Leakage(format!(
                "judge {} labels cannot be used for evaluation without a leaky override",
                judge.name()
            )));
        }
        if !phase.allows_evaluation() {
            return Err(Error::Leakage(format!(
                "evaluation labels are not readable in phase {}",
                phase.name()
            )));
        }
        Ok(EvaluationView { vault: self, phase, judge: Judge::A, leaky: false })
    }

    /// Evaluation view backed by *supervision* labels — the circularity
    /// demonstration. Requires the override token; the view reports
    /// itself leaky so reports get poisoned.
    pub fn open_leaky_evaluation(&self, phase: Phase, _ack: LeakyOverride) -> Result<EvaluationView<'_>> {
        if !phase.allows_evaluation() {
            return Err(Error::Leakage(format!(
                "evaluation (even leaky) is not allowed in phase {}",
                phase.name()
            )));
        }
        Ok(EvaluationView { vault: self, phase, judge: Judge::B, leaky: true })
    }

    fn log(&self, phase: Phase, judge: Judge, target: AuditTarget) {
        self.audit.borrow_mut().push(AuditEntry { phase, judge, target });
    }

    fn grades(&self, judge: Judge) -> &BTreeMap<StoryId, Grade> {
        match judge {
            Judge::A => &self.grades_a,
            Judge::B => &self.grades_b,
        }
    }

    /// Chronological audit entries.
    pub fn audit_entries(&self) -> Vec<AuditEntry> {
        self.audit.borrow().clone()
    }

    /// Per-(phase, judge) counts in order of first access. Per-id reads
    /// count 1 each; a bulk snapshot counts the grades it returned.
    pub fn audit_report(&self) -> Vec<AuditSummaryRow> {
        let mut rows: Vec<AuditSummaryRow> = Vec::new();
        for entry in self.audit.borrow().iter() {
            let n = match &entry.target {
                AuditTarget::Story(_) => 1,
                AuditTarget::Bulk(n) => *n,
            };
            match rows.iter_mut().find(|r| r.phase == entry.phase && r.judge == entry.judge) {
                Some(row) => row.count += n,
                None => rows.push(AuditSummaryRow { phase: entry.phase, judge: entry.judge, count: n }),
            }
        }
        rows
    }

    /// The audit-side leakage assertion: every Judge-A access must sit in
    /// an evaluation phase. Returns the offending entries.
    pub fn audit_violations(&self) -> Vec<AuditEntry> {
        self.audit
            .borrow()
            .iter()
            .filter(|e| e.judge == Judge::A && !e.phase.allows_evaluation())
            .cloned()
            .collect()
    }
}

/// Capability handle over Judge-B grades.
#[derive(Clone, Copy)]
pub struct SupervisionView<'v> {
    vault: &'v LabelVault,
    phase: Phase,
}

impl<'v> SupervisionView<'v> {
    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn grade_of(&self, story_id: &str) -> Option<Grade> {
        self.vault.log(self.phase, Judge::B, AuditTarget::Story(story_id.into()));
        self.vault.grades(Judge::B).get(story_id).copied()
    }

    /// Copy out every grade in one audited bulk read. Pipelines snapshot
    /// once per phase and fan the immutable map out to workers.
    pub fn snapshot(&self) -> BTreeMap<StoryId, Grade> {
        let map = self.vault.grades(Judge::B).clone();
        self.vault.log(self.phase, Judge::B, AuditTarget::Bulk(map.len()));
        map
    }
}

/// Capability handle over the grades metrics are computed from.
///
/// Backed by Judge A unless minted through the leaky override.
#[derive(Clone, Copy)]
pub struct EvaluationView<'v> {
    vault: &'v LabelVault,
    phase: Phase,
    judge: Judge,
    leaky: bool,
}

impl<'v> EvaluationView<'v> {
    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Which judge actually backs this view (B only under the override).
    pub fn judge(&self) -> Judge {
        self.judge
    }

    pub fn is_leaky(&self) -> bool {
        self.leaky
    }

    pub fn grade_of(&self, story_id: &str) -> Option<Grade> {
        self.vault.log(self.phase, self.judge, AuditTarget::Story(story_id.into()));
        self.vault.grades(self.judge).get(story_id).copied()
    }

    pub fn snapshot(&self) -> BTreeMap<StoryId, Grade> {
        let map = self.vault.grades(self.judge).clone();
        self.vault.log(self.phase, self.judge, AuditTarget::Bulk(map.len()));
        map
    }
}

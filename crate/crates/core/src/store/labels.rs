//! Tab-separated label files, one schema per task:
//!
//! * STS: `sentence_a_id \t sentence_b_id \t score` with score in [0, 5]
//! * TE-pair: `premise_id \t hypothesis_id \t class`, class one of
//!   `entailment`, `contradiction`, `neutral`
//! * TE-triplet: `premise_id \t entailment_id \t contradiction_id`
//!
//! No header row. Blank lines are ignored.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{StoreError, Task};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StsPair {
    pub a: usize,
    pub b: usize,
    /// Semantic difference in [0, 1]; 0 is maximal similarity.
    pub difference: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NliClass {
    Entailment,
    Contradiction,
}

impl NliClass {
    /// Cosine the pair loss pulls towards.
    pub fn target_cosine(self) -> f64 {
        match self {
            NliClass::Entailment => 1.0,
            NliClass::Contradiction => -1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NliClass::Entailment => "entailment",
            NliClass::Contradiction => "contradiction",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassPair {
    pub premise: usize,
    pub hypothesis: usize,
    pub class: NliClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub premise: usize,
    pub entailment: usize,
    pub contradiction: usize,
}

/// Labelled items of one split, typed by task.
#[derive(Debug, Clone, PartialEq)]
pub enum LabelSet {
    Sts(Vec<StsPair>),
    Pairs(Vec<ClassPair>),
    Triplets(Vec<Triplet>),
}

impl LabelSet {
    pub fn len(&self) -> usize {
        match self {
            LabelSet::Sts(v) => v.len(),
            LabelSet::Pairs(v) => v.len(),
            LabelSet::Triplets(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task(&self) -> Task {
        match self {
            LabelSet::Sts(_) => Task::Sts,
            LabelSet::Pairs(_) => Task::TePair,
            LabelSet::Triplets(_) => Task::TeTriplet,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedLabels {
    pub set: LabelSet,
    /// Neutral TE-pair rows skipped while loading.
    pub dropped_neutral: usize,
}

/// Maps a 0–5 similarity score to a difference in [0, 1].
pub fn sts_score_to_difference(score: f64) -> f64 {
    (5.0 - score) / 5.0
}

pub fn load_labels(
    source: &Path,
    task: Task,
    sentence_count: usize,
) -> Result<LoadedLabels, StoreError> {
    let text = fs::read_to_string(source).map_err(|e| StoreError::io(source, e))?;
    parse_labels(&text, task, sentence_count)
}

pub fn parse_labels(
    text: &str,
    task: Task,
    sentence_count: usize,
) -> Result<LoadedLabels, StoreError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());

    let mut sts = Vec::new();
    let mut pairs = Vec::new();
    let mut triplets = Vec::new();
    let mut dropped_neutral = 0;

    for record in reader.records() {
        let record = record.map_err(|e| StoreError::Label {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        let fail = |message: String| StoreError::Label { line, message };
        if record.len() != 3 {
            return Err(fail(format!("expected 3 columns, found {}", record.len())));
        }
        let index = |col: usize| -> Result<usize, StoreError> {
            let field = record[col].trim();
            let i: usize = field
                .parse()
                .map_err(|_| fail(format!("column {}: bad sentence id {field:?}", col + 1)))?;
            if i >= sentence_count {
                return Err(fail(format!(
                    "sentence id {i} out of range (sentence_count {sentence_count})"
                )));
            }
            Ok(i)
        };

        match task {
            Task::Sts => {
                let (a, b) = (index(0)?, index(1)?);
                let field = record[2].trim();
                let score: f64 = field
                    .parse()
                    .map_err(|_| fail(format!("bad score {field:?}")))?;
                if !(0.0..=5.0).contains(&score) {
                    return Err(fail(format!("score {score} out of range [0, 5]")));
                }
                sts.push(StsPair {
                    a,
                    b,
                    difference: sts_score_to_difference(score),
                });
            }
            Task::TePair => {
                let (premise, hypothesis) = (index(0)?, index(1)?);
                let class = match record[2].trim() {
                    "entailment" => NliClass::Entailment,
                    "contradiction" => NliClass::Contradiction,
                    "neutral" => {
                        dropped_neutral += 1;
                        continue;
                    }
                    other => return Err(fail(format!("unknown class {other:?}"))),
                };
                pairs.push(ClassPair {
                    premise,
                    hypothesis,
                    class,
                });
            }
            Task::TeTriplet => {
                let t = Triplet {
                    premise: index(0)?,
                    entailment: index(1)?,
                    contradiction: index(2)?,
                };
                if t.premise == t.entailment
                    || t.premise == t.contradiction
                    || t.entailment == t.contradiction
                {
                    return Err(fail("triplet indices must be pairwise distinct".into()));
                }
                triplets.push(t);
            }
        }
    }

    let set = match task {
        Task::Sts => LabelSet::Sts(sts),
        Task::TePair => LabelSet::Pairs(pairs),
        Task::TeTriplet => LabelSet::Triplets(triplets),
    };
    Ok(LoadedLabels {
        set,
        dropped_neutral,
    })
}

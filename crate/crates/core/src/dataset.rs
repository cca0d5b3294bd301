//! Configuration-group datasets: JSONL reading with schema validation,
//! canonical writing, and the seeded warm-up/exploration split.

use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use crate::config_space::{validate_group, Answer, ConfigGroup, ConfigSpace, Kind, ValidationReport};
use crate::rng::seeded;

/// Where a sample came from. Advisory only; never used in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Official,
    Historical,
    Expert,
    Benchmark,
    Other,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Official => "official",
            Provenance::Historical => "historical",
            Provenance::Expert => "expert",
            Provenance::Benchmark => "benchmark",
            Provenance::Other => "other",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "official" => Provenance::Official,
            "historical" => Provenance::Historical,
            "expert" => Provenance::Expert,
            "benchmark" => Provenance::Benchmark,
            "other" => Provenance::Other,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub group: ConfigGroup,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn from_groups(groups: Vec<ConfigGroup>) -> Self {
        Dataset {
            samples: groups
                .into_iter()
                .map(|group| Sample {
                    group,
                    provenance: Provenance::Other,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn groups(&self) -> impl Iterator<Item = &ConfigGroup> {
        self.samples.iter().map(|s| &s.group)
    }

    pub fn group_list(&self) -> Vec<ConfigGroup> {
        self.groups().cloned().collect()
    }

    /// Sub-dataset at the given indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: invalid group: {report}")]
    Invalid { line: usize, report: ValidationReport },
    #[error("warm-up fraction {0} outside (0, 1)")]
    FractionOutOfRange(f64),
    #[error("cannot split an empty dataset")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetWarning {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for DatasetWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupRecord {
    #[serde(rename = "type")]
    group_type: Kind,
    candidate: Json,
    question: String,
    answer: Json,
    #[serde(default)]
    provenance: Option<String>,
}

/// Outcome of one dataset line.
enum LineOutcome {
    Skip,
    Sample(Sample, Option<DatasetWarning>),
}

fn parse_line(space: &ConfigSpace, line: usize, raw: &str) -> Result<LineOutcome, DatasetError> {
    let trimmed = raw.trim();
    if trimmed.is_empty() || trimmed.starts_with('#') {
        return Ok(LineOutcome::Skip);
    }
    let rec: GroupRecord = serde_json::from_str(trimmed).map_err(|e| DatasetError::Malformed {
        line,
        message: e.to_string(),
    })?;
    let mut candidate: Vec<String> = match &rec.candidate {
        Json::String(s) => vec![s.clone()],
        Json::Array(items) => items
            .iter()
            .map(|v| v.as_str().map(str::to_string))
            .collect::<Option<_>>()
            .ok_or_else(|| DatasetError::Malformed {
                line,
                message: "candidate entries must be strings".into(),
            })?,
        _ => {
            return Err(DatasetError::Malformed {
                line,
                message: "candidate must be a string or a list".into(),
            })
        }
    };
    candidate.sort();
    let answer = Answer::from_json(rec.group_type, &rec.answer).map_err(|v| DatasetError::Invalid {
        line,
        report: ValidationReport { violations: vec![v] },
    })?;
    let group = ConfigGroup {
        group_type: rec.group_type,
        candidate,
        question: rec.question,
        answer,
    };
    let report = validate_group(space, &group);
    if !report.is_ok() {
        return Err(DatasetError::Invalid { line, report });
    }
    let (provenance, warning) = match rec.provenance.as_deref() {
        None => (Provenance::Other, None),
        Some(label) => match Provenance::parse(label) {
            Some(p) => (p, None),
            None => (
                Provenance::Other,
                Some(DatasetWarning {
                    line,
                    message: format!("unknown provenance {label:?}, recorded as \"other\""),
                }),
            ),
        },
    };
    Ok(LineOutcome::Sample(Sample { group, provenance }, warning))
}

/// Parse and validate a dataset. Fails on the first bad record.
pub fn read_dataset(
    source: &str,
    space: &ConfigSpace,
) -> Result<(Dataset, Vec<DatasetWarning>), DatasetError> {
    let mut ds = Dataset::default();
    let mut warnings = Vec::new();
    for (idx, raw) in source.lines().enumerate() {
        if let LineOutcome::Sample(s, w) = parse_line(space, idx + 1, raw)? {
            ds.samples.push(s);
            warnings.extend(w);
        }
    }
    Ok((ds, warnings))
}

/// Every bad record in the document, in line order.
pub fn lint_dataset(source: &str, space: &ConfigSpace) -> Vec<DatasetError> {
    source
        .lines()
        .enumerate()
        .filter_map(|(idx, raw)| parse_line(space, idx + 1, raw).err())
        .collect()
}

/// Canonical JSON object for one sample (keys sorted).
pub fn sample_to_json(sample: &Sample) -> Json {
    let mut obj = serde_json::Map::new();
    obj.insert("answer".into(), sample.group.answer.to_json());
    obj.insert(
        "candidate".into(),
        Json::Array(
            sample
                .group
                .candidate
                .iter()
                .map(|c| Json::from(c.as_str()))
                .collect(),
        ),
    );
    obj.insert("provenance".into(), Json::from(sample.provenance.as_str()));
    obj.insert("question".into(), Json::from(sample.group.question.as_str()));
    obj.insert("type".into(), Json::from(sample.group.group_type.as_str()));
    Json::Object(obj)
}

/// Canonical JSONL: one compact record per line, keys sorted.
pub fn write_dataset(ds: &Dataset) -> String {
    let mut out = String::new();
    for s in &ds.samples {
        out.push_str(&sample_to_json(s).to_string());
        out.push('\n');
    }
    out
}

/// Seeded partition into (warm-up, exploration) index lists, each in
/// original order. The warm-up part has `round_half_up(fraction * len)` items.
pub fn split_indices(
    len: usize,
    warmup_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), DatasetError> {
    if !(warmup_fraction > 0.0 && warmup_fraction < 1.0) {
        return Err(DatasetError::FractionOutOfRange(warmup_fraction));
    }
    if len == 0 {
        return Err(DatasetError::Empty);
    }
    let take = ((warmup_fraction * len as f64) + 0.5).floor() as usize;
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut seeded(seed));
    let mut warm = order[..take].to_vec();
    let mut explore = order[take..].to_vec();
    warm.sort_unstable();
    explore.sort_unstable();
    Ok((warm, explore))
}

pub fn split_dataset(
    ds: &Dataset,
    warmup_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), DatasetError> {
    let (w, e) = split_indices(ds.len(), warmup_fraction, seed)?;
    Ok((ds.select(&w), ds.select(&e)))
}

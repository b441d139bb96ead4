//! Reference-game instances: annotation import, split bookkeeping, batching.
//!
//! Annotation files are JSON (an array of records, or one record per line).
//! Two record shapes are accepted:
//!
//! * named: `{"target", "distractor", "description" | "description_id",
//!   "category": "visual"|"blind", "split"?}`
//! * candidate list (the public SNARE layout): `{"objects": [a, b],
//!   "answer": 0|1, "annotation" | "description_id", "visual": bool, "split"?}`
//!
//! When a record has no `split`, it is taken from the file stem
//! (`train`, `val`/`valid`, `test`).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("record {record}: parse error: {message}")]
    Parse { record: usize, message: String },
    #[error("record {record}: missing field `{field}`")]
    MissingField { record: usize, field: &'static str },
    #[error("record {record}: invalid `{field}`: {message}")]
    InvalidField {
        record: usize,
        field: &'static str,
        message: String,
    },
    #[error("record {record}: target and distractor are both {id}")]
    SameCandidates { record: usize, id: String },
    #[error("record {record}: {count} candidates, the game is strictly pairwise")]
    CandidateCount { record: usize, count: usize },
    #[error("split {0} has no instances")]
    EmptySplit(Split),
    #[error("batch size must be at least 1")]
    BatchSize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Visual,
    Blind,
}

impl Category {
    pub const ALL: [Category; 2] = [Category::Visual, Category::Blind];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Visual => "visual",
            Category::Blind => "blind",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "visual" => Ok(Category::Visual),
            "blind" | "blindfolded" => Ok(Category::Blind),
            other => Err(format!("unknown category {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "valid" | "val" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// One round of the reference game.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ReferenceInstance {
    pub target_id: String,
    pub distractor_id: String,
    pub description_id: String,
    pub category: Category,
    pub split: Split,
}

impl ReferenceInstance {
    pub fn to_json(&self) -> Value {
        serde_json::json!({
            "target": self.target_id,
            "distractor": self.distractor_id,
            "description_id": self.description_id,
            "category": self.category.as_str(),
            "split": self.split.as_str(),
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Accept candidate-list records without an `answer` (e.g. a hidden test
    /// split). The first candidate stands in as target; such instances are
    /// only good for counting.
    pub allow_unlabeled: bool,
}

pub fn load_annotations(path: &Path) -> Result<Vec<ReferenceInstance>, DatasetError> {
    load_annotations_with(path, LoadOptions::default())
}

pub fn load_annotations_with(
    path: &Path,
    options: LoadOptions,
) -> Result<Vec<ReferenceInstance>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let split_hint = path
        .file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.parse::<Split>().ok());
    parse_annotations(&text, split_hint, options)
}

/// Parses annotation text; any bad record fails the whole load.
pub fn parse_annotations(
    text: &str,
    split_hint: Option<Split>,
    options: LoadOptions,
) -> Result<Vec<ReferenceInstance>, DatasetError> {
    let records: Vec<Value> = if text.trim_start().starts_with('[') {
        match serde_json::from_str::<Value>(text) {
            Ok(Value::Array(items)) => items,
            Ok(_) => unreachable!("text starts with '['"),
            Err(e) => {
                return Err(DatasetError::Parse {
                    record: 0,
                    message: e.to_string(),
                })
            }
        }
    } else {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| DatasetError::Parse {
                    record: i,
                    message: e.to_string(),
                })
            })
            .collect::<Result<_, _>>()?
    };
    records
        .iter()
        .enumerate()
        .map(|(i, r)| parse_record(i, r, split_hint, options))
        .collect()
}

fn str_field<'a>(record: usize, v: &'a Value, field: &'static str) -> Result<Option<&'a str>, DatasetError> {
    match v.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(other) => Err(DatasetError::InvalidField {
            record,
            field,
            message: format!("expected a string, found {other}"),
        }),
    }
}

fn required<'a>(record: usize, v: &'a Value, field: &'static str) -> Result<&'a str, DatasetError> {
    str_field(record, v, field)?.ok_or(DatasetError::MissingField { record, field })
}

fn parse_record(
    record: usize,
    v: &Value,
    split_hint: Option<Split>,
    options: LoadOptions,
) -> Result<ReferenceInstance, DatasetError> {
    if !v.is_object() {
        return Err(DatasetError::Parse {
            record,
            message: "record is not an object".into(),
        });
    }
    let split = match str_field(record, v, "split")? {
        Some(s) => s.parse().map_err(|message| DatasetError::InvalidField {
            record,
            field: "split",
            message,
        })?,
        None => split_hint.ok_or(DatasetError::MissingField {
            record,
            field: "split",
        })?,
    };
    let description_id = match str_field(record, v, "description_id")? {
        Some(d) => d,
        None => match str_field(record, v, "description")? {
            Some(d) => d,
            None => required(record, v, "annotation")?,
        },
    }
    .to_string();

    let (target_id, distractor_id, category) = if let Some(objects) = v.get("objects") {
        let objects = objects.as_array().ok_or_else(|| DatasetError::InvalidField {
            record,
            field: "objects",
            message: "expected a list of two ids".into(),
        })?;
        if objects.len() != 2 {
            return Err(DatasetError::CandidateCount {
                record,
                count: objects.len(),
            });
        }
        let ids = objects
            .iter()
            .map(|o| {
                o.as_str().map(str::to_string).ok_or_else(|| DatasetError::InvalidField {
                    record,
                    field: "objects",
                    message: format!("non-string candidate {o}"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let answer = match v.get("answer") {
            Some(a) => match a.as_u64() {
                Some(a @ (0 | 1)) => a as usize,
                _ => {
                    return Err(DatasetError::InvalidField {
                        record,
                        field: "answer",
                        message: format!("expected 0 or 1, found {a}"),
                    })
                }
            },
            None if options.allow_unlabeled => 0,
            None => {
                return Err(DatasetError::MissingField {
                    record,
                    field: "answer",
                })
            }
        };
        let category = match v.get("visual") {
            Some(Value::Bool(true)) => Category::Visual,
            Some(Value::Bool(false)) => Category::Blind,
            Some(other) => {
                return Err(DatasetError::InvalidField {
                    record,
                    field: "visual",
                    message: format!("expected a boolean, found {other}"),
                })
            }
            None => parse_category(record, v)?,
        };
        let [a, b]: [String; 2] = ids.try_into().expect("two candidates");
        if answer == 0 {
            (a, b, category)
        } else {
            (b, a, category)
        }
    } else {
        (
            required(record, v, "target")?.to_string(),
            required(record, v, "distractor")?.to_string(),
            parse_category(record, v)?,
        )
    };
    if target_id == distractor_id {
        return Err(DatasetError::SameCandidates {
            record,
            id: target_id,
        });
    }
    Ok(ReferenceInstance {
        target_id,
        distractor_id,
        description_id,
        category,
        split,
    })
}

fn parse_category(record: usize, v: &Value) -> Result<Category, DatasetError> {
    required(record, v, "category")?
        .parse()
        .map_err(|message| DatasetError::InvalidField {
            record,
            field: "category",
            message,
        })
}

/// Per-split dataset statistics.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitCounts {
    /// Distinct object categories, when an object→category table is known.
    pub categories: Option<usize>,
    pub objects: usize,
    /// One per record.
    pub pairings: usize,
    /// Distinct unordered (candidate pair, description) combinations.
    pub unordered_pairings: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitStats {
    pub splits: BTreeMap<Split, SplitCounts>,
}

impl SplitStats {
    pub fn compute(
        instances: &[ReferenceInstance],
        object_categories: Option<&HashMap<String, String>>,
    ) -> Self {
        let mut splits = BTreeMap::new();
        for split in Split::ALL {
            let mut objects = BTreeSet::new();
            let mut unordered = BTreeSet::new();
            let mut pairings = 0;
            for inst in instances.iter().filter(|i| i.split == split) {
                pairings += 1;
                objects.insert(inst.target_id.as_str());
                objects.insert(inst.distractor_id.as_str());
                let (a, b) = if inst.target_id <= inst.distractor_id {
                    (&inst.target_id, &inst.distractor_id)
                } else {
                    (&inst.distractor_id, &inst.target_id)
                };
                unordered.insert((a, b, &inst.description_id));
            }
            let categories = object_categories.map(|table| {
                objects
                    .iter()
                    .filter_map(|o| table.get(*o))
                    .collect::<BTreeSet<_>>()
                    .len()
            });
            splits.insert(
                split,
                SplitCounts {
                    categories,
                    objects: objects.len(),
                    pairings,
                    unordered_pairings: unordered.len(),
                },
            );
        }
        SplitStats { splits }
    }

    pub fn get(&self, split: Split) -> &SplitCounts {
        &self.splits[&split]
    }

    pub fn category_counts(instances: &[ReferenceInstance]) -> BTreeMap<Category, usize> {
        let mut out = BTreeMap::new();
        for i in instances {
            *out.entry(i.category).or_insert(0) += 1;
        }
        out
    }

    /// `key=value` lines, e.g. `train.pairings=39104`.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        for (split, c) in &self.splits {
            let cats = c
                .categories
                .map_or_else(|| "unknown".to_string(), |n| n.to_string());
            out.push_str(&format!("{split}.categories={cats}\n"));
            out.push_str(&format!("{split}.objects={}\n", c.objects));
            out.push_str(&format!("{split}.pairings={}\n", c.pairings));
            if c.unordered_pairings != c.pairings {
                out.push_str(&format!(
                    "{split}.pairings_unordered={}\n",
                    c.unordered_pairings
                ));
            }
        }
        out
    }
}

/// Published per-split counts for the SNARE benchmark (train, valid, test).
pub const SNARE_CATEGORIES: [usize; 3] = [207, 7, 48];
pub const SNARE_OBJECTS: [usize; 3] = [6153, 371, 1357];
pub const SNARE_PAIRINGS: [usize; 3] = [39104, 2304, 8751];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountCheck {
    pub key: String,
    pub expected: usize,
    pub found: Option<usize>,
}

impl CountCheck {
    pub fn passed(&self) -> bool {
        self.found == Some(self.expected)
    }
}

#[derive(Debug, Clone)]
pub struct CountReport {
    pub stats: SplitStats,
    pub checks: Vec<CountCheck>,
}

impl CountReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CountCheck::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CountCheck> {
        self.checks.iter().filter(|c| !c.passed())
    }

    pub fn to_key_values(&self) -> String {
        let mut out = self.stats.to_key_values();
        for c in self.failures() {
            let found = c.found.map_or_else(|| "unknown".into(), |n| n.to_string());
            out.push_str(&format!(
                "diff.{}=expected {} found {}\n",
                c.key, c.expected, found
            ));
        }
        out.push_str(&format!(
            "result={}\n",
            if self.passed() { "pass" } else { "fail" }
        ));
        out
    }
}

/// Compares computed statistics with the nine published constants.
///
/// A pairing count passes under either counting convention (per record or
/// per unordered pair and description).
pub fn validate_counts(
    instances: &[ReferenceInstance],
    object_categories: Option<&HashMap<String, String>>,
) -> CountReport {
    let stats = SplitStats::compute(instances, object_categories);
    let mut checks = Vec::new();
    for (i, split) in Split::ALL.into_iter().enumerate() {
        let c = stats.get(split);
        checks.push(CountCheck {
            key: format!("{split}.categories"),
            expected: SNARE_CATEGORIES[i],
            found: c.categories,
        });
        checks.push(CountCheck {
            key: format!("{split}.objects"),
            expected: SNARE_OBJECTS[i],
            found: Some(c.objects),
        });
        let pairings = if c.unordered_pairings == SNARE_PAIRINGS[i] {
            c.unordered_pairings
        } else {
            c.pairings
        };
        checks.push(CountCheck {
            key: format!("{split}.pairings"),
            expected: SNARE_PAIRINGS[i],
            found: Some(pairings),
        });
    }
    CountReport { stats, checks }
}

/// Object → split table.
pub type SplitAssignment = BTreeMap<String, Split>;

/// Moves every object that SNARE also uses into SNARE's split, so the
/// reconstruction model never pretrains on a SNARE validation or test object.
/// Objects only known to SNARE are not added.
pub fn reassign_split(pretrain: &SplitAssignment, snare: &SplitAssignment) -> SplitAssignment {
    pretrain
        .iter()
        .map(|(id, &split)| (id.clone(), snare.get(id).copied().unwrap_or(split)))
        .collect()
}

fn epoch_seed(seed: u64, epoch: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(epoch.wrapping_add(1).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Shuffled batches of one split for one epoch. The order is a pure function
/// of `(seed, epoch)`; the last batch may be short.
pub fn batch_iterator(
    instances: &[ReferenceInstance],
    split: Split,
    seed: u64,
    epoch: u64,
    batch_size: usize,
) -> Result<Vec<Vec<&ReferenceInstance>>, DatasetError> {
    if batch_size == 0 {
        return Err(DatasetError::BatchSize);
    }
    let mut members: Vec<&ReferenceInstance> =
        instances.iter().filter(|i| i.split == split).collect();
    if members.is_empty() {
        return Err(DatasetError::EmptySplit(split));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(seed, epoch));
    members.shuffle(&mut rng);
    Ok(members.chunks(batch_size).map(<[_]>::to_vec).collect())
}

pub fn split_of(instances: &[ReferenceInstance], split: Split) -> Vec<ReferenceInstance> {
    instances.iter().filter(|i| i.split == split).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(i: usize, category: Category, split: Split) -> ReferenceInstance {
        ReferenceInstance {
            target_id: format!("t{i}"),
            distractor_id: format!("d{i}"),
            description_id: format!("w{i}"),
            category,
            split,
        }
    }

    #[test]
    fn minimal_named_record() {
        let text = r#"{"target":"a","distractor":"b","description":"w0","category":"visual","split":"valid"}"#;
        let got = parse_annotations(text, None, LoadOptions::default()).unwrap();
        assert_eq!(
            got,
            vec![ReferenceInstance {
                target_id: "a".into(),
                distractor_id: "b".into(),
                description_id: "w0".into(),
                category: Category::Visual,
                split: Split::Valid,
            }]
        );
    }

    #[test]
    fn candidate_list_record() {
        let text = r#"[{"objects":["x","y"],"answer":1,"annotation":"oval back","visual":false}]"#;
        let got = parse_annotations(text, Some(Split::Train), LoadOptions::default()).unwrap();
        assert_eq!(got[0].target_id, "y");
        assert_eq!(got[0].distractor_id, "x");
        assert_eq!(got[0].description_id, "oval back");
        assert_eq!(got[0].category, Category::Blind);
        assert_eq!(got[0].split, Split::Train);
    }

    #[test]
    fn identical_candidates_named() {
        let text = "{\"target\":\"a\",\"distractor\":\"b\",\"description\":\"w\",\"category\":\"blind\",\"split\":\"train\"}\n\
                    {\"target\":\"c\",\"distractor\":\"c\",\"description\":\"w\",\"category\":\"blind\",\"split\":\"train\"}\n";
        match parse_annotations(text, None, LoadOptions::default()) {
            Err(DatasetError::SameCandidates { record, id }) => {
                assert_eq!((record, id.as_str()), (1, "c"))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn three_candidates_rejected() {
        let text = r#"[{"objects":["x","y","z"],"answer":1,"annotation":"w","visual":true,"split":"train"}]"#;
        assert!(matches!(
            parse_annotations(text, None, LoadOptions::default()),
            Err(DatasetError::CandidateCount { count: 3, .. })
        ));
    }

    #[test]
    fn missing_answer_unless_unlabeled() {
        let text = r#"[{"objects":["x","y"],"annotation":"w","visual":true}]"#;
        assert!(matches!(
            parse_annotations(text, Some(Split::Test), LoadOptions::default()),
            Err(DatasetError::MissingField { field: "answer", .. })
        ));
        let got = parse_annotations(
            text,
            Some(Split::Test),
            LoadOptions {
                allow_unlabeled: true,
            },
        )
        .unwrap();
        assert_eq!(got.len(), 1);
    }

    #[test]
    fn four_record_category_counts() {
        let recs: Vec<String> = (0..4)
            .map(|i| {
                let cat = if i < 2 { "visual" } else { "blind" };
                format!(r#"{{"target":"a{i}","distractor":"b{i}","description":"w{i}","category":"{cat}","split":"train"}}"#)
            })
            .collect();
        let got = parse_annotations(&recs.join("\n"), None, LoadOptions::default()).unwrap();
        let counts = SplitStats::category_counts(&got);
        assert_eq!(counts[&Category::Visual], 2);
        assert_eq!(counts[&Category::Blind], 2);
    }

    #[test]
    fn malformed_json_is_atomic() {
        let text = "{\"target\":\"a\",\"distractor\":\"b\",\"description\":\"w\",\"category\":\"visual\",\"split\":\"train\"}\n{oops";
        match parse_annotations(text, None, LoadOptions::default()) {
            Err(DatasetError::Parse { record, .. }) => assert_eq!(record, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fixture_fails_validation_with_diff() {
        let fixture: Vec<_> = (0..4)
            .map(|i| inst(i, Category::Visual, Split::Train))
            .collect();
        let report = validate_counts(&fixture, None);
        assert!(!report.passed());
        let text = report.to_key_values();
        assert!(text.contains("diff.train.pairings=expected 39104 found 4"));
        assert!(text.contains("result=fail"));
    }

    #[test]
    fn unordered_convention_reported_when_different() {
        let mut a = inst(0, Category::Visual, Split::Train);
        let mut b = a.clone();
        std::mem::swap(&mut b.target_id, &mut b.distractor_id);
        a.description_id = "same".into();
        b.description_id = "same".into();
        let stats = SplitStats::compute(&[a, b], None);
        assert_eq!(stats.get(Split::Train).pairings, 2);
        assert_eq!(stats.get(Split::Train).unordered_pairings, 1);
        assert!(stats.to_key_values().contains("train.pairings_unordered=1"));
    }

    #[test]
    fn reassign_rules() {
        let pre: SplitAssignment = [
            ("both".to_string(), Split::Train),
            ("pre-only".to_string(), Split::Test),
        ]
        .into();
        let snare: SplitAssignment = [
            ("both".to_string(), Split::Valid),
            ("snare-only".to_string(), Split::Train),
        ]
        .into();
        let out = reassign_split(&pre, &snare);
        assert_eq!(out["both"], Split::Valid);
        assert_eq!(out["pre-only"], Split::Test);
        assert!(!out.contains_key("snare-only"));
        assert_eq!(reassign_split(&pre, &SplitAssignment::new()), pre);
        assert_eq!(reassign_split(&out, &snare), out);
    }

    #[test]
    fn batches() {
        let data: Vec<_> = (0..5).map(|i| inst(i, Category::Visual, Split::Train)).collect();
        let b = batch_iterator(&data, Split::Train, 9, 0, 2).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 2, 1]);
        assert_eq!(b, batch_iterator(&data, Split::Train, 9, 0, 2).unwrap());
        assert!(matches!(
            batch_iterator(&data, Split::Test, 9, 0, 2),
            Err(DatasetError::EmptySplit(Split::Test))
        ));
        assert!(matches!(
            batch_iterator(&data, Split::Train, 9, 0, 0),
            Err(DatasetError::BatchSize)
        ));
    }

    #[test]
    fn different_seeds_differ() {
        let data: Vec<_> = (0..12).map(|i| inst(i, Category::Blind, Split::Train)).collect();
        let order = |seed| -> Vec<String> {
            batch_iterator(&data, Split::Train, seed, 0, 12).unwrap()[0]
                .iter()
                .map(|i| i.target_id.clone())
                .collect()
        };
        assert_ne!(order(1), order(2));
        let epoch = |e| batch_iterator(&data, Split::Train, 1, e, 12).unwrap();
        assert_ne!(epoch(0), epoch(1));
    }
}

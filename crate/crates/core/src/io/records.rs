//! JSONL record formats for samples, hypothesis batches and judge verdicts.
//!
//! Every file may start with a header line `{"schema": .., "version": 1}`.
//! The header is optional on load and always written on save.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Verdicts;

pub const FORMAT_VERSION: u32 = 1;

const SAMPLES_SCHEMA: &str = "samples";
const HYPOTHESES_SCHEMA: &str = "hypotheses";
const VERDICTS_SCHEMA: &str = "verdicts";

/// One forecasting instance: context, question and the ground-truth events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    #[serde(default)]
    pub context: String,
    pub question: String,
    pub ground_truth: Vec<String>,
    /// Precomputed ground-truth vectors, one per text. When absent the
    /// texts go through the embedding client.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_embeddings: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff_date: Option<String>,
}

impl SampleRecord {
    fn check(&self) -> std::result::Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty sample id".into());
        }
        if self.question.trim().is_empty() {
            return Err(format!("sample '{}' has an empty question", self.id));
        }
        if self.ground_truth.is_empty() {
            return Err(format!("sample '{}' has no ground truth", self.id));
        }
        if let Some(vs) = &self.ground_truth_embeddings {
            check_vectors(vs, self.ground_truth.len(), "ground_truth_embeddings")?;
        }
        Ok(())
    }
}

/// The hypotheses produced in one sampling round for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisBatch {
    pub sample_id: String,
    /// Sampling round, counted from 1.
    pub round: usize,
    pub hypotheses: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<Vec<Vec<f64>>>,
    /// Model name, or "synthetic".
    #[serde(default = "unspecified")]
    pub provenance: String,
}

fn unspecified() -> String {
    "unspecified".into()
}

impl HypothesisBatch {
    fn check(&self) -> std::result::Result<(), String> {
        if self.sample_id.trim().is_empty() {
            return Err("empty sample id".into());
        }
        if self.round == 0 {
            return Err(format!(
                "sample '{}': rounds are counted from 1",
                self.sample_id
            ));
        }
        if self.hypotheses.is_empty() {
            return Err(format!(
                "sample '{}' round {} has no hypotheses",
                self.sample_id, self.round
            ));
        }
        if let Some(vs) = &self.embeddings {
            check_vectors(vs, self.hypotheses.len(), "embeddings")?;
        }
        Ok(())
    }
}

/// Batches grouped by sample id (sorted) and ordered by round.
pub type HypothesisSet = BTreeMap<String, Vec<HypothesisBatch>>;

fn check_vectors(vs: &[Vec<f64>], expected: usize, field: &str) -> std::result::Result<(), String> {
    if vs.len() != expected {
        return Err(format!(
            "{field} has {} vectors for {expected} texts",
            vs.len()
        ));
    }
    let dim = vs.first().map_or(0, Vec::len);
    if vs.iter().any(|v| v.len() != dim || v.is_empty()) {
        return Err(format!(
            "{field} vectors must be non-empty and share one dimension"
        ));
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema: String,
    version: u32,
}

/// Parses a JSONL file into `(line number, record)` pairs.
fn read_jsonl<T: DeserializeOwned>(path: &Path, schema: &str) -> Result<Vec<(usize, T)>> {
    let text = fs::read_to_string(path)?;
    let parse_err = |line: usize, detail: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        detail,
    };
    let mut out = Vec::new();
    let mut first = true;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        if std::mem::take(&mut first) {
            let value: serde_json::Value =
                serde_json::from_str(raw).map_err(|e| parse_err(line, e.to_string()))?;
            if value.get("schema").is_some() {
                let header: Header =
                    serde_json::from_value(value).map_err(|e| parse_err(line, e.to_string()))?;
                if header.schema != schema {
                    return Err(parse_err(
                        line,
                        format!("expected schema '{schema}', found '{}'", header.schema),
                    ));
                }
                if header.version != FORMAT_VERSION {
                    return Err(parse_err(
                        line,
                        format!("unsupported version {}", header.version),
                    ));
                }
                continue;
            }
        }
        let record = serde_json::from_str(raw).map_err(|e| parse_err(line, e.to_string()))?;
        out.push((line, record));
    }
    Ok(out)
}

/// Writes a header plus one record per line, atomically.
fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    schema: &str,
    items: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    let mut buf = serde_json::to_vec(&Header {
        schema: schema.into(),
        version: FORMAT_VERSION,
    })?;
    buf.push(b'\n');
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn duplicates<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen = HashMap::new();
    for id in ids {
        *seen.entry(id).or_insert(0usize) += 1;
    }
    let mut dups: Vec<String> = seen
        .into_iter()
        .filter(|(_, n)| *n > 1)
        .map(|(id, _)| id.to_string())
        .collect();
    dups.sort();
    dups
}

/// Loads samples in file order. Rejects malformed records (with their line
/// number) and duplicate ids (listing every duplicated id).
pub fn load_samples(path: &Path) -> Result<Vec<SampleRecord>> {
    let rows: Vec<(usize, SampleRecord)> = read_jsonl(path, SAMPLES_SCHEMA)?;
    for (line, r) in &rows {
        r.check().map_err(|detail| Error::Parse {
            path: path.to_path_buf(),
            line: *line,
            detail,
        })?;
    }
    let dups = duplicates(rows.iter().map(|(_, r)| r.id.as_str()));
    if !dups.is_empty() {
        return Err(Error::DuplicateIds(dups));
    }
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

pub fn save_samples(path: &Path, samples: &[SampleRecord]) -> Result<()> {
    write_jsonl(path, SAMPLES_SCHEMA, samples)
}

/// Groups batches per sample, sorted by round, and checks that every
/// sample's rounds are exactly 1..=K.
pub fn group_batches(batches: Vec<HypothesisBatch>) -> Result<HypothesisSet> {
    let mut set = HypothesisSet::new();
    for b in batches {
        set.entry(b.sample_id.clone()).or_default().push(b);
    }
    for (id, rounds) in set.iter_mut() {
        rounds.sort_by_key(|b| b.round);
        for (i, b) in rounds.iter().enumerate() {
            if b.round != i + 1 {
                let detail = if i > 0 && rounds[i - 1].round == b.round {
                    format!("round {} appears twice", b.round)
                } else {
                    format!("round {} is missing", i + 1)
                };
                return Err(Error::Structure(format!(
                    "sample '{id}': rounds must be contiguous from 1; {detail}"
                )));
            }
        }
    }
    Ok(set)
}

pub fn load_hypotheses(path: &Path) -> Result<HypothesisSet> {
    let rows: Vec<(usize, HypothesisBatch)> = read_jsonl(path, HYPOTHESES_SCHEMA)?;
    for (line, b) in &rows {
        b.check().map_err(|detail| Error::Parse {
            path: path.to_path_buf(),
            line: *line,
            detail,
        })?;
    }
    group_batches(rows.into_iter().map(|(_, b)| b).collect())
}

/// Saves in canonical order: sample id, then round.
pub fn save_hypotheses(path: &Path, set: &HypothesisSet) -> Result<()> {
    write_jsonl(path, HYPOTHESES_SCHEMA, set.values().flatten())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerdictRow {
    sample_id: String,
    verdicts: Vec<bool>,
}

/// Loads per-sample, per-round judge verdicts.
pub fn load_verdicts(path: &Path) -> Result<Verdicts> {
    let rows: Vec<(usize, VerdictRow)> = read_jsonl(path, VERDICTS_SCHEMA)?;
    let dups = duplicates(rows.iter().map(|(_, r)| r.sample_id.as_str()));
    if !dups.is_empty() {
        return Err(Error::DuplicateIds(dups));
    }
    Ok(rows
        .into_iter()
        .map(|(_, r)| (r.sample_id, r.verdicts))
        .collect())
}

pub fn save_verdicts(path: &Path, verdicts: &Verdicts) -> Result<()> {
    let mut rows: Vec<VerdictRow> = verdicts
        .iter()
        .map(|(id, v)| VerdictRow {
            sample_id: id.clone(),
            verdicts: v.clone(),
        })
        .collect();
    rows.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    write_jsonl(path, VERDICTS_SCHEMA, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str) -> SampleRecord {
        SampleRecord {
            id: id.into(),
            context: "ctx".into(),
            question: "what next?".into(),
            ground_truth: vec!["a".into(), "b".into()],
            ground_truth_embeddings: Some(vec![vec![1.0, 0.0], vec![0.1, 0.7]]),
            cutoff_date: Some("2024-01-01".into()),
        }
    }

    fn batch(id: &str, round: usize) -> HypothesisBatch {
        HypothesisBatch {
            sample_id: id.into(),
            round,
            hypotheses: vec!["x".into(), "y".into()],
            embeddings: None,
            provenance: "synthetic".into(),
        }
    }

    #[test]
    fn empty_file_is_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        fs::write(&p, "").unwrap();
        assert!(load_samples(&p).unwrap().is_empty());
        fs::write(&p, "{\"schema\":\"samples\",\"version\":1}\n").unwrap();
        assert!(load_samples(&p).unwrap().is_empty());
    }

    #[test]
    fn samples_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        let mut s2 = sample("b");
        s2.ground_truth_embeddings = None;
        s2.cutoff_date = None;
        // awkward floats must survive text round trip bit for bit
        s2.ground_truth = vec!["only".into()];
        let mut s1 = sample("a");
        s1.ground_truth_embeddings = Some(vec![vec![0.1 + 0.2, 1e-300], vec![-3.0f64.sqrt(), 7.0]]);
        let data = vec![s2, s1];
        save_samples(&p, &data).unwrap();
        let back = load_samples(&p).unwrap();
        assert_eq!(back, data);
        let p2 = dir.path().join("s2.jsonl");
        save_samples(&p2, &back).unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn missing_ground_truth_rejected_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        fs::write(
            &p,
            "{\"schema\":\"samples\",\"version\":1}\n\n{\"id\":\"a\",\"question\":\"q\",\"ground_truth\":[]}\n",
        )
        .unwrap();
        match load_samples(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        fs::write(
            &p,
            "{\"id\":\"a\",\"question\":\"q\",\"ground_truth\":[\"g\"]}\n{oops\n",
        )
        .unwrap();
        let err = load_samples(&p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(err.to_string().contains(":2:"));
    }

    #[test]
    fn wrong_schema_and_unknown_field_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        fs::write(&p, "{\"schema\":\"verdicts\",\"version\":1}\n").unwrap();
        assert!(matches!(
            load_samples(&p),
            Err(Error::Parse { line: 1, .. })
        ));
        fs::write(
            &p,
            "{\"id\":\"a\",\"question\":\"q\",\"ground_truth\":[\"g\"],\"extra\":1}\n",
        )
        .unwrap();
        assert!(matches!(
            load_samples(&p),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn duplicate_ids_listed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        save_samples(
            &p,
            &[
                sample("z"),
                sample("a"),
                sample("z"),
                sample("a"),
                sample("m"),
            ],
        )
        .unwrap();
        match load_samples(&p) {
            Err(Error::DuplicateIds(ids)) => assert_eq!(ids, vec!["a", "z"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ground_truth_vector_count_checked() {
        let mut s = sample("a");
        s.ground_truth_embeddings = Some(vec![vec![1.0]]);
        assert!(s.check().is_err());
        s.ground_truth_embeddings = Some(vec![vec![1.0], vec![1.0, 2.0]]);
        assert!(s.check().is_err());
    }

    #[test]
    fn hypotheses_grouped_and_round_tripped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.jsonl");
        let mut set = group_batches(vec![batch("b", 2), batch("a", 1), batch("b", 1)]).unwrap();
        set.get_mut("a").unwrap()[0].embeddings = Some(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(set.keys().collect::<Vec<_>>(), vec!["a", "b"]);
        assert_eq!(
            set["b"].iter().map(|b| b.round).collect::<Vec<_>>(),
            vec![1, 2]
        );
        save_hypotheses(&p, &set).unwrap();
        assert_eq!(load_hypotheses(&p).unwrap(), set);
    }

    #[test]
    fn rounds_must_be_contiguous() {
        let gap = group_batches(vec![batch("a", 1), batch("a", 3)]).unwrap_err();
        assert!(gap.to_string().contains("round 2 is missing"), "{gap}");
        let twice = group_batches(vec![batch("a", 1), batch("a", 1)]).unwrap_err();
        assert!(twice.to_string().contains("twice"), "{twice}");
        let late = group_batches(vec![batch("a", 2)]).unwrap_err();
        assert!(late.to_string().contains("round 1 is missing"), "{late}");
    }

    #[test]
    fn provenance_defaults() {
        let b: HypothesisBatch =
            serde_json::from_str(r#"{"sample_id":"a","round":1,"hypotheses":["h"]}"#).unwrap();
        assert_eq!(b.provenance, "unspecified");
    }

    #[test]
    fn verdicts_round_trip_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.jsonl");
        let mut v = Verdicts::new();
        v.insert("b".into(), vec![false, true]);
        v.insert("a".into(), vec![false]);
        save_verdicts(&p, &v).unwrap();
        assert_eq!(load_verdicts(&p).unwrap(), v);
        fs::write(
            &p,
            "{\"sample_id\":\"a\",\"verdicts\":[true]}\n{\"sample_id\":\"a\",\"verdicts\":[false]}\n",
        )
        .unwrap();
        assert!(matches!(load_verdicts(&p), Err(Error::DuplicateIds(ids)) if ids == vec!["a"]));
    }
}

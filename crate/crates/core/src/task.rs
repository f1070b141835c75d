//! Synthetic two-cue question tasks and dataset-manifest ingestion.
//!
//! Two generators are provided. `unimodal` hides a single latent class in the
//! feature vector. `xmodal` hides two independent cues and sets the gold
//! option to their modular sum, so neither half of the feature vector carries
//! any marginal information about the answer: a policy can only beat chance
//! by combining both halves.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rng::{namespace, Stream};

/// Option texts used by the synthetic generators (up to 8 options).
const OPTION_TEXTS: [&str; 8] = [
    "a bell ringing",
    "a siren passing",
    "a crowd murmuring",
    "a door closing",
    "rain falling",
    "glass breaking",
    "a dog barking",
    "an engine idling",
];

const GEN_QUESTION: &str = "Which event do the combined cues indicate?";

/// One question instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: String,
    /// Cue feature vector of dimension `D_task`.
    pub features: Vec<f64>,
    /// Option texts; option `i` is labeled with letter `'A' + i`.
    pub options: Vec<String>,
    /// Gold option letters (non-empty, all within the option range).
    pub gold: BTreeSet<char>,
}

impl Task {
    pub fn new(
        id: String,
        features: Vec<f64>,
        options: Vec<String>,
        gold: BTreeSet<char>,
    ) -> Result<Self> {
        if !(2..=8).contains(&options.len()) {
            return Err(CoreError::Config(format!(
                "task {id:?}: option count must be in 2..=8, got {}",
                options.len()
            )));
        }
        if gold.is_empty() {
            return Err(CoreError::Config(format!("task {id:?}: empty gold set")));
        }
        let last = (b'A' + options.len() as u8 - 1) as char;
        for &g in &gold {
            if !('A'..=last).contains(&g) {
                return Err(CoreError::Config(format!(
                    "task {id:?}: gold letter {g:?} outside options A..={last}"
                )));
            }
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(CoreError::Config(format!("task {id:?}: non-finite feature")));
        }
        Ok(Task { id, features, options, gold })
    }

    pub fn option_count(&self) -> usize {
        self.options.len()
    }
}

/// Synthetic environment flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvMode {
    /// One latent class, features = onehot(class) + noise, gold = class.
    Unimodal,
    /// Two latent cues, features = concat of one-hots + noise,
    /// gold = (a + v) mod N; each cue alone is uninformative.
    Xmodal,
}

impl EnvMode {
    /// Task-feature dimension for `n_options` options.
    pub fn d_task(&self, n_options: usize) -> usize {
        match self {
            EnvMode::Unimodal => n_options,
            EnvMode::Xmodal => 2 * n_options,
        }
    }

    /// Expected total feature mass (sum of the one-hot entries).
    pub fn feature_mass(&self) -> f64 {
        match self {
            EnvMode::Unimodal => 1.0,
            EnvMode::Xmodal => 2.0,
        }
    }
}

impl fmt::Display for EnvMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvMode::Unimodal => write!(f, "unimodal"),
            EnvMode::Xmodal => write!(f, "xmodal"),
        }
    }
}

impl std::str::FromStr for EnvMode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unimodal" => Ok(EnvMode::Unimodal),
            "xmodal" => Ok(EnvMode::Xmodal),
            other => Err(CoreError::Config(format!(
                "unknown env mode {other:?} (expected unimodal or xmodal)"
            ))),
        }
    }
}

fn letter(i: usize) -> char {
    (b'A' + i as u8) as char
}

/// Generate `n` synthetic tasks.
///
/// Task `i` draws from the stream `[TASK_GEN, i]` derived from `seed`: first
/// the latent cue(s) via `next_below(n_options)` (cue `a`, then `v` in xmodal
/// mode), then one `next_gaussian()` noise term per feature dimension, scaled
/// by `noise`.
pub fn gen_tasks(
    mode: EnvMode,
    n: usize,
    n_options: usize,
    noise: f64,
    seed: u64,
) -> Result<Vec<Task>> {
    if n == 0 {
        return Err(CoreError::Config("task count must be at least 1".into()));
    }
    if !(2..=8).contains(&n_options) {
        return Err(CoreError::Config(format!(
            "option count must be in 2..=8, got {n_options}"
        )));
    }
    if noise < 0.0 || !noise.is_finite() {
        return Err(CoreError::Config(format!("noise must be finite and >= 0, got {noise}")));
    }
    let options: Vec<String> = OPTION_TEXTS[..n_options].iter().map(|s| s.to_string()).collect();
    let d = mode.d_task(n_options);
    let mut tasks = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = Stream::derive(seed, &[namespace::TASK_GEN, i as u64]);
        let mut features = vec![0.0; d];
        let gold_idx = match mode {
            EnvMode::Unimodal => {
                let c = rng.next_below(n_options);
                features[c] = 1.0;
                c
            }
            EnvMode::Xmodal => {
                let a = rng.next_below(n_options);
                let v = rng.next_below(n_options);
                features[a] = 1.0;
                features[n_options + v] = 1.0;
                (a + v) % n_options
            }
        };
        for f in features.iter_mut() {
            *f += noise * rng.next_gaussian();
        }
        let gold = BTreeSet::from([letter(gold_idx)]);
        tasks.push(Task::new(format!("{mode}-{i:05}"), features, options.clone(), gold)?);
    }
    Ok(tasks)
}

/// On-disk manifest record: one JSON object per line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub question: String,
    pub options: Vec<String>,
    /// Gold letters as a string, e.g. `"A"` or `"AC"`.
    pub answer: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
}

/// FNV-1a 64-bit hash.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// Deterministic bag-of-words featurization for records without features:
/// lowercase the question and option texts, split on whitespace, add 1.0 to
/// bucket `fnv1a(word) % dim` per word, then L2-normalize.
fn hashed_features(question: &str, options: &[String], dim: usize) -> Vec<f64> {
    let mut f = vec![0.0; dim];
    let mut text = question.to_lowercase();
    for opt in options {
        text.push(' ');
        text.push_str(&opt.to_lowercase());
    }
    for word in text.split_whitespace() {
        f[(fnv1a(word.as_bytes()) % dim as u64) as usize] += 1.0;
    }
    let norm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in f.iter_mut() {
            *x /= norm;
        }
    }
    f
}

fn record_to_task(rec: ManifestRecord, hash_dim: usize, line: usize) -> Result<Task> {
    let mut gold = BTreeSet::new();
    if rec.answer.is_empty() {
        return Err(CoreError::Config(format!("line {line}: empty answer")));
    }
    let last = (b'A' + rec.options.len().clamp(1, 26) as u8 - 1) as char;
    for ch in rec.answer.chars() {
        if !ch.is_ascii_uppercase() || ch > last {
            return Err(CoreError::Config(format!(
                "line {line}: unknown answer letter {ch:?} for {} options",
                rec.options.len()
            )));
        }
        gold.insert(ch);
    }
    let features = match rec.features {
        Some(f) => f,
        None => {
            if hash_dim == 0 {
                return Err(CoreError::Config(format!(
                    "line {line}: record has no features and hash dimension is 0"
                )));
            }
            hashed_features(&rec.question, &rec.options, hash_dim)
        }
    };
    Task::new(rec.id, features, rec.options, gold)
        .map_err(|e| CoreError::Config(format!("line {line}: {e}")))
}

/// Load a line-delimited JSON manifest into tasks, in file order.
///
/// Records without a `features` array are featurized into `hash_dim`
/// dimensions with the documented hashed bag-of-words scheme. Malformed
/// lines, unknown answer letters, and duplicate ids are all collected and
/// reported together with their line numbers.
pub fn load_manifest(path: &Path, hash_dim: usize) -> Result<Vec<Task>> {
    let body = fs::read_to_string(path)?;
    let mut tasks = Vec::new();
    let mut errors = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    for (i, raw) in body.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = match serde_json::from_str(raw) {
            Ok(r) => r,
            Err(e) => {
                errors.push(format!("line {line}: {e}"));
                continue;
            }
        };
        if !seen_ids.insert(rec.id.clone()) {
            errors.push(format!("line {line}: duplicate id {:?}", rec.id));
            continue;
        }
        match record_to_task(rec, hash_dim, line) {
            Ok(t) => tasks.push(t),
            Err(e) => errors.push(e.to_string()),
        }
    }
    if !errors.is_empty() {
        return Err(CoreError::ManifestLoad { errors });
    }
    Ok(tasks)
}

/// Write tasks as a manifest loadable by [`load_manifest`], one JSON record
/// per line, feature vectors included so the round trip is exact.
pub fn write_manifest(tasks: &[Task], path: &Path) -> Result<()> {
    let mut out = fs::File::create(path)?;
    for task in tasks {
        let rec = ManifestRecord {
            id: task.id.clone(),
            question: GEN_QUESTION.to_string(),
            options: task.options.clone(),
            answer: task.gold.iter().collect(),
            features: Some(task.features.clone()),
        };
        let line = serde_json::to_string(&rec)
            .map_err(|e| CoreError::Config(format!("serialize {:?}: {e}", task.id)))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unimodal_construction_rule() {
        // noise 0: features are an exact one-hot of the gold class
        let tasks = gen_tasks(EnvMode::Unimodal, 64, 4, 0.0, 7).unwrap();
        for t in &tasks {
            assert_eq!(t.features.len(), 4);
            let c = t.features.iter().position(|&x| x == 1.0).unwrap();
            assert_eq!(t.features.iter().filter(|&&x| x != 0.0).count(), 1);
            assert_eq!(t.gold, BTreeSet::from([letter(c)]));
        }
    }

    #[test]
    fn xmodal_modular_sum_rule() {
        let tasks = gen_tasks(EnvMode::Xmodal, 256, 4, 0.0, 11).unwrap();
        for t in &tasks {
            assert_eq!(t.features.len(), 8);
            let a = t.features[..4].iter().position(|&x| x == 1.0).unwrap();
            let v = t.features[4..].iter().position(|&x| x == 1.0).unwrap();
            assert_eq!(t.gold, BTreeSet::from([letter((a + v) % 4)]));
        }
    }

    #[test]
    fn xmodal_single_cue_is_uninformative() {
        // For fixed a, the map v -> (a+v) mod N is a bijection, so any
        // classifier reading only the first half scores exactly 1/N over the
        // uniform cue grid.
        let n = 4usize;
        for a in 0..n {
            let golds: BTreeSet<char> = (0..n).map(|v| letter((a + v) % n)).collect();
            assert_eq!(golds.len(), n);
        }
        // empirically: every (a, gold) combination occurs
        let tasks = gen_tasks(EnvMode::Xmodal, 2000, 4, 0.0, 3).unwrap();
        let mut seen = BTreeSet::new();
        for t in &tasks {
            let a = t.features[..4].iter().position(|&x| x == 1.0).unwrap();
            seen.insert((a, *t.gold.iter().next().unwrap()));
        }
        assert_eq!(seen.len(), 16);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_tasks(EnvMode::Xmodal, 32, 4, 0.1, 99).unwrap();
        let b = gen_tasks(EnvMode::Xmodal, 32, 4, 0.1, 99).unwrap();
        assert_eq!(a, b);
        let c = gen_tasks(EnvMode::Xmodal, 32, 4, 0.1, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_generator_config_rejected() {
        assert!(gen_tasks(EnvMode::Xmodal, 0, 4, 0.0, 1).is_err());
        assert!(gen_tasks(EnvMode::Xmodal, 4, 1, 0.0, 1).is_err());
        assert!(gen_tasks(EnvMode::Xmodal, 4, 9, 0.0, 1).is_err());
        assert!(gen_tasks(EnvMode::Xmodal, 4, 4, -0.5, 1).is_err());
    }

    #[test]
    fn manifest_round_trip_preserves_tasks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tasks.jsonl");
        let tasks = gen_tasks(EnvMode::Xmodal, 20, 4, 0.1, 5).unwrap();
        write_manifest(&tasks, &path).unwrap();
        let loaded = load_manifest(&path, 0).unwrap();
        assert_eq!(tasks, loaded);
        // idempotent and order-preserving
        let again = load_manifest(&path, 0).unwrap();
        assert_eq!(loaded, again);
    }

    #[test]
    fn manifest_errors_name_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        fs::write(
            &path,
            concat!(
                r#"{"id":"t0","question":"q","options":["x","y"],"answer":"A"}"#,
                "\n",
                r#"{"id":"t1","question":"q","options":["x","y"]}"#,
                "\n",
                r#"{"id":"t0","question":"q","options":["x","y"],"answer":"B"}"#,
                "\n",
                r#"{"id":"t3","question":"q","options":["x","y"],"answer":"Z"}"#,
                "\n",
            ),
        )
        .unwrap();
        let err = load_manifest(&path, 8).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2") && msg.contains("answer"), "{msg}");
        assert!(msg.contains("line 3") && msg.contains("duplicate id"), "{msg}");
        assert!(msg.contains("line 4") && msg.contains("unknown answer letter"), "{msg}");
    }

    #[test]
    fn hashed_features_are_stable_and_normalized() {
        let opts = vec!["a bell".to_string(), "a door".to_string()];
        let f1 = hashed_features("what rings?", &opts, 16);
        let f2 = hashed_features("what rings?", &opts, 16);
        assert_eq!(f1, f2);
        let norm: f64 = f1.iter().map(|x| x * x).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn manifest_without_features_uses_hash_dim() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nf.jsonl");
        fs::write(
            &path,
            r#"{"id":"t0","question":"what rings in the yard?","options":["a bell","a horn"],"answer":"A"}"#,
        )
        .unwrap();
        let tasks = load_manifest(&path, 12).unwrap();
        assert_eq!(tasks[0].features.len(), 12);
        assert!(load_manifest(&path, 0).is_err());
    }
}

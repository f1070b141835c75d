//! Plain-text checkpoints that round-trip parameters bit-exactly.
//!
//! Format:
//! - line 1: `grpo-echo-ckpt v1`
//! - line 2: `V D k D_task` (decimal integers, space-separated)
//! - line 3: the V vocabulary symbols, space-separated
//! - lines 4..4+V: rows of W, row-major, as decimal floats with 17
//!   significant digits (`{:.16e}`), which is enough to reproduce every
//!   f64 exactly on parse.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::policy::{PolicyParams, PolicySnapshot, Role};
use crate::vocab::Vocabulary;

pub const MAGIC: &str = "grpo-echo-ckpt v1";

fn parse_err(line: usize, message: impl Into<String>) -> CoreError {
    CoreError::CheckpointParse { line, message: message.into() }
}

/// Serialize a snapshot to `path`.
pub fn write_checkpoint(snapshot: &PolicySnapshot, path: &Path) -> Result<()> {
    let params = snapshot.params();
    let vocab = snapshot.vocab();
    let d = params.dim();
    let mut out = String::new();
    writeln!(out, "{MAGIC}").unwrap();
    writeln!(out, "{} {} {} {}", params.vocab_size, d, params.k, params.d_task).unwrap();
    writeln!(out, "{}", vocab.tokens().join(" ")).unwrap();
    for v in 0..params.vocab_size {
        let row = params.row(v);
        for (i, x) in row.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            write!(out, "{x:.16e}").unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Parse a checkpoint written by [`write_checkpoint`].
pub fn read_checkpoint(path: &Path) -> Result<PolicySnapshot> {
    let body = fs::read_to_string(path)?;
    let mut lines = body.lines().enumerate();

    let (_, magic) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    if magic != MAGIC {
        return Err(parse_err(1, format!("expected header {MAGIC:?}, got {magic:?}")));
    }

    let (_, dims) = lines.next().ok_or_else(|| parse_err(2, "missing dimension line"))?;
    let nums: Vec<usize> = dims
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|e| parse_err(2, format!("bad integer {t:?}: {e}"))))
        .collect::<Result<_>>()?;
    let [v, d, k, d_task] = nums[..] else {
        return Err(parse_err(2, format!("expected 4 integers, got {}", nums.len())));
    };
    if d != d_task + k * v {
        return Err(parse_err(2, format!("inconsistent dimensions: D={d} != D_task + k*V = {}", d_task + k * v)));
    }

    let (_, sym_line) = lines.next().ok_or_else(|| parse_err(3, "missing vocabulary line"))?;
    let symbols: Vec<String> = sym_line.split_whitespace().map(str::to_string).collect();
    if symbols.len() != v {
        return Err(parse_err(3, format!("expected {v} symbols, got {}", symbols.len())));
    }
    let vocab = Vocabulary::new(symbols).map_err(|e| parse_err(3, e.to_string()))?;

    let mut w = Vec::with_capacity(v * d);
    let mut rows = 0;
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        if rows == v {
            return Err(parse_err(line_no, format!("unexpected extra row (header promised {v})")));
        }
        let before = w.len();
        for t in line.split_whitespace() {
            let x: f64 = t
                .parse()
                .map_err(|e| parse_err(line_no, format!("bad float {t:?}: {e}")))?;
            w.push(x);
        }
        let got = w.len() - before;
        if got != d {
            return Err(parse_err(line_no, format!("row has {got} entries, expected {d}")));
        }
        rows += 1;
    }
    if rows != v {
        return Err(parse_err(3 + rows + 1, format!("found {rows} rows, header promised {v}")));
    }

    let params = PolicyParams::new(w, v, k, d_task)
        .map_err(|e| parse_err(2, format!("invalid parameters: {e}")))?;
    PolicySnapshot::new(params, vocab, Role::Current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn random_snapshot(seed: u64) -> PolicySnapshot {
        let vocab = Vocabulary::standard(4, 16).unwrap();
        let k = 3;
        let d_task = 8;
        let d = d_task + k * vocab.len();
        let mut rng = Stream::new(seed);
        let w: Vec<f64> = (0..vocab.len() * d).map(|_| rng.next_gaussian() * 1.7).collect();
        let params = PolicyParams::new(w, vocab.len(), k, d_task).unwrap();
        PolicySnapshot::new(params, vocab, Role::Current).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.txt");
        let snap = random_snapshot(31);
        write_checkpoint(&snap, &path).unwrap();
        let loaded = read_checkpoint(&path).unwrap();
        assert_eq!(loaded.params().w.len(), snap.params().w.len());
        for (a, b) in loaded.params().w.iter().zip(&snap.params().w) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(loaded.vocab(), snap.vocab());
        assert_eq!(loaded.params().k, snap.params().k);
        assert_eq!(loaded.params().d_task, snap.params().d_task);
    }

    #[test]
    fn zero_checkpoint_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zero.txt");
        let vocab = Vocabulary::standard(4, 16).unwrap();
        let params = PolicyParams::zeros(vocab.len(), 3, 8).unwrap();
        let v = vocab.len();
        let d = params.dim();
        let snap = PolicySnapshot::new(params, vocab, Role::Current).unwrap();
        write_checkpoint(&snap, &path).unwrap();

        let body = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = body.lines().collect();
        assert_eq!(lines[0], MAGIC);
        assert_eq!(lines[1], format!("{v} {d} 3 8"));
        assert_eq!(lines.len(), 3 + v);
        for row in &lines[3..] {
            for tok in row.split_whitespace() {
                assert_eq!(tok.parse::<f64>().unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn header_mismatch_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        let snap = random_snapshot(5);
        write_checkpoint(&snap, &path).unwrap();

        // corrupt the dimension line: claim one more row than the body has
        let body = fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = body.lines().map(str::to_string).collect();
        let v = snap.params().vocab_size;
        let d = snap.params().dim();
        lines[1] = format!("{} {} {} {}", v + 1, d, 3, 8);
        fs::write(&path, lines.join("\n")).unwrap();
        let err = read_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("line"), "{err}");

        // truncate a row
        let mut lines: Vec<String> = body.lines().map(str::to_string).collect();
        lines[4] = lines[4].split_whitespace().take(d - 1).collect::<Vec<_>>().join(" ");
        fs::write(&path, lines.join("\n")).unwrap();
        let err = read_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("line 5"), "{err}");
    }

    #[test]
    fn wrong_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        fs::write(&path, "not-a-checkpoint\n1 2 3 4\n").unwrap();
        let err = read_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }
}

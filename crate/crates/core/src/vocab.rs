//! Token vocabulary: structural tags, option letters, and filler reasoning words.

use std::collections::HashMap;

use crate::error::{CoreError, Result};

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";
pub const EOS: &str = "<eos>";

/// Specials that must appear exactly once, in no particular position.
const REQUIRED_SPECIALS: [&str; 5] = [THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE, EOS];

/// Default pool of filler "reasoning word" symbols.
const FILLER_WORDS: [&str; 24] = [
    "the", "audio", "visual", "cue", "scene", "sound", "image", "suggests", "shows", "matches",
    "together", "implies", "likely", "signal", "context", "both", "combined", "indicates",
    "evidence", "hints", "points", "pattern", "source", "event",
];

/// An ordered set of distinct token symbols with a bijective symbol/index map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    think_open: usize,
    think_close: usize,
    answer_open: usize,
    answer_close: usize,
    eos: usize,
}

impl Vocabulary {
    /// Validate and wrap an ordered token list.
    ///
    /// Requires at least 10 distinct whitespace-free symbols, each required
    /// special exactly once, and the option letters `A`..`D`.
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 10 {
            return Err(CoreError::Config(format!(
                "vocabulary needs at least 10 tokens, got {}",
                tokens.len()
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(CoreError::Config(format!(
                    "token {i:?} must be non-empty and whitespace-free: {tok:?}"
                )));
            }
            if index.insert(tok.clone(), i).is_some() {
                return Err(CoreError::Config(format!("duplicate token {tok:?}")));
            }
        }
        for special in REQUIRED_SPECIALS {
            if !index.contains_key(special) {
                return Err(CoreError::Config(format!("missing required token {special:?}")));
            }
        }
        for letter in 'A'..='D' {
            if !index.contains_key(letter.to_string().as_str()) {
                return Err(CoreError::Config(format!("missing option letter {letter:?}")));
            }
        }
        let at = |s: &str| index[s];
        Ok(Vocabulary {
            think_open: at(THINK_OPEN),
            think_close: at(THINK_CLOSE),
            answer_open: at(ANSWER_OPEN),
            answer_close: at(ANSWER_CLOSE),
            eos: at(EOS),
            tokens,
            index,
        })
    }

    /// The standard layout used by the training harness: the five specials,
    /// then `max(4, n_options)` option letters, then `n_filler` reasoning
    /// words drawn from a fixed pool (synthesized as `w<i>` past the pool).
    pub fn standard(n_options: usize, n_filler: usize) -> Result<Self> {
        if !(2..=8).contains(&n_options) {
            return Err(CoreError::Config(format!(
                "option count must be in 2..=8, got {n_options}"
            )));
        }
        if n_filler == 0 {
            return Err(CoreError::Config("need at least one filler token".into()));
        }
        let mut tokens: Vec<String> = REQUIRED_SPECIALS.iter().map(|s| s.to_string()).collect();
        let n_letters = n_options.max(4);
        for i in 0..n_letters {
            tokens.push(((b'A' + i as u8) as char).to_string());
        }
        for i in 0..n_filler {
            match FILLER_WORDS.get(i) {
                Some(w) => tokens.push(w.to_string()),
                None => tokens.push(format!("w{i}")),
            }
        }
        Vocabulary::new(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id_of(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn eos_id(&self) -> usize {
        self.eos
    }

    pub fn think_open_id(&self) -> usize {
        self.think_open
    }

    pub fn think_close_id(&self) -> usize {
        self.think_close
    }

    pub fn answer_open_id(&self) -> usize {
        self.answer_open
    }

    pub fn answer_close_id(&self) -> usize {
        self.answer_close
    }

    /// Id of an option letter, if present.
    pub fn letter_id(&self, letter: char) -> Option<usize> {
        self.index.get(letter.to_string().as_str()).copied()
    }

    /// Ids of the first `n` option letters; `None` if any is missing.
    pub fn letter_ids(&self, n: usize) -> Option<Vec<usize>> {
        (0..n)
            .map(|i| self.letter_id((b'A' + i as u8) as char))
            .collect()
    }

    /// Ids of every non-special, non-letter token.
    pub fn filler_ids(&self) -> Vec<usize> {
        (0..self.tokens.len())
            .filter(|&i| {
                let t = self.tokens[i].as_str();
                !REQUIRED_SPECIALS.contains(&t)
                    && !(t.len() == 1 && t.chars().next().is_some_and(|c| c.is_ascii_uppercase()))
            })
            .collect()
    }

    /// Render a token sequence as text.
    ///
    /// Tokens are joined by single spaces, except that no space follows the
    /// `<think>`/`<answer>` openers and none precedes the closers. `<eos>` is
    /// a pure terminator and is not rendered.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        let mut prev: Option<usize> = None;
        for &id in ids {
            if id == self.eos {
                continue;
            }
            if let Some(p) = prev {
                let glue = p == self.think_open
                    || p == self.answer_open
                    || id == self.think_close
                    || id == self.answer_close;
                if !glue {
                    out.push(' ');
                }
            }
            out.push_str(&self.tokens[id]);
            prev = Some(id);
        }
        out
    }
}

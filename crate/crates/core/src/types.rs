//! Vocabulary, sequences and log-probability containers shared by every
//! other module.
//!
//! Token ids are `usize` indices into a [`Vocabulary`]. The blank token and
//! the mask token always sit at ids 0 and 1 so that on-disk formats do not
//! depend on the user's token list.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{AxeError, Result};

pub const EPSILON_TOKEN: &str = "<eps>";
pub const MASK_TOKEN: &str = "<mask>";
pub const EPSILON_ID: usize = 0;
pub const MASK_ID: usize = 1;

/// Value written into non-target entries of an overridden row.
pub const OVERRIDE_SENTINEL: f64 = -1e9;

const MAX_POSITIVE: f64 = 1e-6;
const ROW_NORM_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    tokens: Vec<String>,
}

impl TryFrom<VocabularyRepr> for Vocabulary {
    type Error = AxeError;
    fn try_from(r: VocabularyRepr) -> Result<Self> {
        Vocabulary::build(&r.tokens)
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            tokens: v.user_tokens().to_vec(),
        }
    }
}

impl Vocabulary {
    /// Builds a vocabulary from user tokens, reserving ids 0 and 1 for the
    /// blank and mask tokens.
    pub fn build<S: AsRef<str>>(tokens: &[S]) -> Result<Self> {
        if tokens.is_empty() {
            return Err(AxeError::EmptyVocabulary);
        }
        let mut all = vec![EPSILON_TOKEN.to_string(), MASK_TOKEN.to_string()];
        let mut index = HashMap::new();
        index.insert(EPSILON_TOKEN.to_string(), EPSILON_ID);
        index.insert(MASK_TOKEN.to_string(), MASK_ID);
        for t in tokens {
            let t = t.as_ref();
            if t == EPSILON_TOKEN || t == MASK_TOKEN {
                return Err(AxeError::ReservedToken(t.to_string()));
            }
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(AxeError::Config {
                    field: "vocabulary".into(),
                    reason: format!("token {t:?} is empty or contains whitespace"),
                });
            }
            if index.insert(t.to_string(), all.len()).is_some() {
                return Err(AxeError::DuplicateToken(t.to_string()));
            }
            all.push(t.to_string());
        }
        Ok(Vocabulary { tokens: all, index })
    }

    /// A vocabulary of `count` synthetic tokens named `t0, t1, ...`.
    pub fn synthetic(count: usize) -> Result<Self> {
        let names: Vec<String> = (0..count).map(|i| format!("t{i}")).collect();
        Self::build(&names)
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn epsilon_id(&self) -> usize {
        EPSILON_ID
    }

    pub fn mask_id(&self) -> usize {
        MASK_ID
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Tokens without the two reserved entries.
    pub fn user_tokens(&self) -> &[String] {
        &self.tokens[2..]
    }

    pub fn is_reserved(&self, id: usize) -> bool {
        id == EPSILON_ID || id == MASK_ID
    }

    pub fn encode(&self, tokens: &[&str]) -> Result<Vec<usize>> {
        tokens
            .iter()
            .map(|t| self.id(t).ok_or_else(|| AxeError::UnknownToken(t.to_string())))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<&str> {
        ids.iter().map(|&i| self.token(i).unwrap_or("<unk>")).collect()
    }
}

fn check_plain_ids(ids: &[usize], vocab_size: usize) -> Result<()> {
    if ids.is_empty() {
        return Err(AxeError::EmptySequence);
    }
    for (pos, &id) in ids.iter().enumerate() {
        if id >= vocab_size {
            return Err(AxeError::TokenOutOfRange {
                pos,
                id,
                size: vocab_size,
            });
        }
        if id == EPSILON_ID || id == MASK_ID {
            return Err(AxeError::ReservedId { pos, id });
        }
    }
    Ok(())
}

/// Gold target sequence; never contains the blank or mask token.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TargetSequence(Vec<usize>);

impl TargetSequence {
    pub fn new(ids: Vec<usize>, vocab: &Vocabulary) -> Result<Self> {
        check_plain_ids(&ids, vocab.size())?;
        Ok(TargetSequence(ids))
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SourceSequence(Vec<usize>);

impl SourceSequence {
    pub fn new(ids: Vec<usize>, vocab: &Vocabulary) -> Result<Self> {
        check_plain_ids(&ids, vocab.size())?;
        Ok(SourceSequence(ids))
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Decoder input: gold tokens at observed positions, the mask token elsewhere.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedInput {
    ids: Vec<usize>,
    observed: Vec<bool>,
}

impl MaskedInput {
    /// Builds the input from a target and a per-position observed flag.
    pub fn from_flags(target: &TargetSequence, observed: Vec<bool>) -> Result<Self> {
        if observed.len() != target.len() {
            return Err(AxeError::Shape(format!(
                "{} observed flags for a target of length {}",
                observed.len(),
                target.len()
            )));
        }
        let ids = target
            .ids()
            .iter()
            .zip(&observed)
            .map(|(&y, &o)| if o { y } else { MASK_ID })
            .collect();
        Ok(MaskedInput { ids, observed })
    }

    /// `n` mask tokens; this is the inference-time input.
    pub fn all_masked(n: usize) -> Self {
        MaskedInput {
            ids: vec![MASK_ID; n],
            observed: vec![false; n],
        }
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn observed(&self) -> &[bool] {
        &self.observed
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn num_masked(&self) -> usize {
        self.observed.iter().filter(|o| !**o).count()
    }

    /// Fills masked positions back in from `target`.
    pub fn unmask(&self, target: &TargetSequence) -> Result<Vec<usize>> {
        if target.len() != self.len() {
            return Err(AxeError::Shape("target length differs from input".into()));
        }
        Ok(self
            .ids
            .iter()
            .zip(target.ids())
            .map(|(&i, &y)| if i == MASK_ID { y } else { i })
            .collect())
    }
}

/// `m` rows of natural-log probabilities over a vocabulary of size `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogProbMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    overridden: Vec<bool>,
}

impl LogProbMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(AxeError::Shape("log-prob matrix needs m >= 1 and V >= 1".into()));
        }
        if values.len() != rows * cols {
            return Err(AxeError::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                values.len()
            )));
        }
        if values.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
            return Err(AxeError::NonFinite("log-prob matrix".into()));
        }
        Ok(LogProbMatrix {
            rows,
            cols,
            values,
            overridden: vec![false; rows],
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(AxeError::Shape("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// Row-wise log-softmax of arbitrary scores.
    pub fn from_logits(rows: usize, cols: usize, logits: &[f64]) -> Result<Self> {
        if logits.len() != rows * cols {
            return Err(AxeError::Shape("logit count".into()));
        }
        let mut values = Vec::with_capacity(logits.len());
        for row in logits.chunks(cols.max(1)) {
            let lse = log_sum_exp(row);
            values.extend(row.iter().map(|x| x - lse));
        }
        Self::new(rows, cols, values)
    }

    pub fn uniform(rows: usize, cols: usize) -> Self {
        let lp = -(cols as f64).ln();
        Self::new(rows, cols, vec![lp; rows * cols]).expect("valid shape")
    }

    /// Number of prediction rows (`m`).
    pub fn m(&self) -> usize {
        self.rows
    }

    /// Vocabulary size (`V`).
    pub fn vocab_size(&self) -> usize {
        self.cols
    }

    /// Log-probability of `token` at 0-based row `row`.
    #[inline]
    pub fn get(&self, row: usize, token: usize) -> f64 {
        self.values[row * self.cols + token]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn set(&mut self, row: usize, token: usize, value: f64) {
        self.values[row * self.cols + token] = value;
    }

    pub fn is_overridden(&self, row: usize) -> bool {
        self.overridden[row]
    }

    pub fn overridden(&self) -> &[bool] {
        &self.overridden
    }

    /// Replaces `row` with a point mass on `token`, using the sentinel for
    /// every other entry, and flags the row.
    pub fn override_row(&mut self, row: usize, token: usize) {
        let start = row * self.cols;
        for (v, x) in self.values[start..start + self.cols].iter_mut().enumerate() {
            *x = if v == token { 0.0 } else { OVERRIDE_SENTINEL };
        }
        self.overridden[row] = true;
    }

    pub fn set_overridden_flags(&mut self, flags: Vec<bool>) -> Result<()> {
        if flags.len() != self.rows {
            return Err(AxeError::Shape("override flag count".into()));
        }
        self.overridden = flags;
        Ok(())
    }

    pub fn validate(&self) -> ValidationReport {
        validate_logprob_matrix(self)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowReport {
    /// |log-sum-exp| of the row.
    pub residual: f64,
    pub max_entry: f64,
    pub overridden: bool,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub rows: Vec<RowReport>,
    pub max_residual: f64,
    pub max_entry: f64,
    pub passed: bool,
}

/// Checks that every entry is a log-probability and every non-overridden row
/// normalizes. Never fails; the verdict is in the report.
pub fn validate_logprob_matrix(p: &LogProbMatrix) -> ValidationReport {
    let mut rows = Vec::with_capacity(p.m());
    for r in 0..p.m() {
        let row = p.row(r);
        let max_entry = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let residual = log_sum_exp(row).abs();
        let overridden = p.is_overridden(r);
        let ok = max_entry <= MAX_POSITIVE && (overridden || residual <= ROW_NORM_TOL);
        rows.push(RowReport {
            residual,
            max_entry,
            overridden,
            ok,
        });
    }
    let checked = rows.iter().filter(|r| !r.overridden);
    let max_residual = checked.map(|r| r.residual).fold(0.0, f64::max);
    let max_entry = rows.iter().map(|r| r.max_entry).fold(f64::NEG_INFINITY, f64::max);
    let passed = rows.iter().all(|r| r.ok);
    ValidationReport {
        rows,
        max_residual,
        max_entry,
        passed,
    }
}

//! Plain-text file formats.
//!
//! Instance file (`axe-instance v1`):
//!
//! ```text
//! axe-instance v1
//! # comments and blank lines are ignored
//! vocab 3
//! a
//! b
//! c
//! target a b c
//! matrix 3 5
//! -1.00000000000e1 -1.00000000000e1 0.00000000000e0 -1.00000000000e1 -1.00000000000e1
//! ...
//! ```
//!
//! The `vocab` block lists user tokens only; matrix columns follow id order,
//! so column 0 is `<eps>`, column 1 is `<mask>` and column `k + 2` is the
//! `k`-th listed token. Values are natural-log probabilities; `-inf` is
//! accepted.
//!
//! Checkpoint file (`axe-checkpoint v1`): `step`, `vocab_size`, a `config`
//! block of TOML lines, then `params`, `adam_m` and `adam_v` blocks, each
//! introduced by `<name> <count>` and holding whitespace-separated values in
//! shortest round-trip notation.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{AxeError, Result};
use crate::toy::{Adam, ToyModel, ToyModelConfig};
use crate::types::{LogProbMatrix, TargetSequence, Vocabulary};

pub const INSTANCE_HEADER: &str = "axe-instance v1";
pub const CHECKPOINT_HEADER: &str = "axe-checkpoint v1";

const VALUES_PER_LINE: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub vocab: Vocabulary,
    pub target: TargetSequence,
    pub matrix: LogProbMatrix,
}

fn perr(line: usize, msg: impl Into<String>) -> AxeError {
    AxeError::Parse { line, msg: msg.into() }
}

/// Non-blank, non-comment lines with their 1-based line numbers.
struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines {
            inner: text.lines().enumerate(),
            last: 0,
        }
    }

    fn next_line(&mut self, what: &str) -> Result<(usize, &'a str)> {
        for (k, raw) in self.inner.by_ref() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            self.last = k + 1;
            return Ok((k + 1, line));
        }
        Err(perr(self.last + 1, format!("unexpected end of file, expected {what}")))
    }

    fn expect_rest(&mut self) -> Result<()> {
        match self.next_line("end of file") {
            Ok((n, l)) => Err(perr(n, format!("unexpected trailing content {l:?}"))),
            Err(_) => Ok(()),
        }
    }
}

fn keyword<'a>(line: (usize, &'a str), key: &str) -> Result<(usize, Vec<&'a str>)> {
    let (n, l) = line;
    let mut parts = l.split_whitespace();
    if parts.next() != Some(key) {
        return Err(perr(n, format!("expected `{key} ...`, found {l:?}")));
    }
    Ok((n, parts.collect()))
}

fn parse_usize(n: usize, s: &str, what: &str) -> Result<usize> {
    s.parse().map_err(|_| perr(n, format!("{what}: {s:?} is not a non-negative integer")))
}

fn parse_f64(n: usize, s: &str) -> Result<f64> {
    s.parse().map_err(|_| perr(n, format!("{s:?} is not a number")))
}

pub fn parse_instance(text: &str) -> Result<Instance> {
    let mut lines = Lines::new(text);
    let (n, header) = lines.next_line("header")?;
    if header != INSTANCE_HEADER {
        return Err(perr(n, format!("expected header {INSTANCE_HEADER:?}")));
    }

    let (n, args) = keyword(lines.next_line("vocab")?, "vocab")?;
    let [k] = args[..] else {
        return Err(perr(n, "expected `vocab <count>`"));
    };
    let k = parse_usize(n, k, "vocab count")?;
    let mut tokens = Vec::with_capacity(k);
    for _ in 0..k {
        let (n, tok) = lines.next_line("vocabulary token")?;
        if tok.split_whitespace().count() != 1 {
            return Err(perr(n, format!("vocabulary line {tok:?} must hold exactly one token")));
        }
        tokens.push(tok);
    }
    let vocab = Vocabulary::build(&tokens).map_err(|e| perr(n, e.to_string()))?;

    let (n, toks) = keyword(lines.next_line("target")?, "target")?;
    let ids = vocab.encode(&toks).map_err(|e| perr(n, e.to_string()))?;
    let target = TargetSequence::new(ids, &vocab).map_err(|e| perr(n, e.to_string()))?;

    let (n, args) = keyword(lines.next_line("matrix")?, "matrix")?;
    let [m, v] = args[..] else {
        return Err(perr(n, "expected `matrix <rows> <cols>`"));
    };
    let (m, v) = (parse_usize(n, m, "rows")?, parse_usize(n, v, "cols")?);
    if v != vocab.size() {
        return Err(perr(n, format!("matrix has {v} columns but the vocabulary has {} ids", vocab.size())));
    }
    if m == 0 {
        return Err(perr(n, "matrix needs at least one row"));
    }
    let mut values = Vec::with_capacity(m * v);
    for r in 0..m {
        let (n, row) = lines.next_line(&format!("matrix row {}", r + 1))?;
        let before = values.len();
        for s in row.split_whitespace() {
            values.push(parse_f64(n, s)?);
        }
        if values.len() - before != v {
            return Err(perr(n, format!("row has {} values, expected {v}", values.len() - before)));
        }
    }
    lines.expect_rest()?;
    let matrix = LogProbMatrix::new(m, v, values).map_err(|e| perr(n, e.to_string()))?;
    Ok(Instance { vocab, target, matrix })
}

/// Formats a log-probability with 12 significant digits.
pub fn format_logprob(x: f64) -> String {
    if x == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{x:.11e}")
    }
}

pub fn format_instance(inst: &Instance) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{INSTANCE_HEADER}");
    let _ = writeln!(s, "vocab {}", inst.vocab.user_tokens().len());
    for t in inst.vocab.user_tokens() {
        let _ = writeln!(s, "{t}");
    }
    let _ = writeln!(s, "target {}", inst.vocab.decode(inst.target.ids()).join(" "));
    let (m, v) = (inst.matrix.m(), inst.matrix.vocab_size());
    let _ = writeln!(s, "matrix {m} {v}");
    for r in 0..m {
        let row: Vec<String> = inst.matrix.row(r).iter().map(|&x| format_logprob(x)).collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
    s
}

pub fn read_instance(path: &Path) -> Result<Instance> {
    parse_instance(&read_to_string(path)?)
}

pub fn write_instance(path: &Path, inst: &Instance) -> Result<()> {
    write_file(path, &format_instance(inst))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| AxeError::Io(format!("{}: {e}", path.display())))
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| AxeError::Io(format!("{}: {e}", dir.display())))?;
        }
    }
    fs::write(path, contents).map_err(|e| AxeError::Io(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ToyModel,
    pub adam: Adam,
}

fn write_values(s: &mut String, name: &str, xs: &[f64]) {
    let _ = writeln!(s, "{name} {}", xs.len());
    for chunk in xs.chunks(VALUES_PER_LINE) {
        let row: Vec<String> = chunk.iter().map(|x| format!("{x:e}")).collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
}

fn read_values(lines: &mut Lines<'_>, name: &str) -> Result<Vec<f64>> {
    let (n, args) = keyword(lines.next_line(name)?, name)?;
    let [count] = args[..] else {
        return Err(perr(n, format!("expected `{name} <count>`")));
    };
    let count = parse_usize(n, count, name)?;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let (n, row) = lines.next_line(name)?;
        for s in row.split_whitespace() {
            out.push(parse_f64(n, s)?);
        }
        if out.len() > count {
            return Err(perr(n, format!("{name} block holds more than {count} values")));
        }
    }
    Ok(out)
}

pub fn format_checkpoint(ck: &Checkpoint) -> Result<String> {
    let mut s = String::new();
    let _ = writeln!(s, "{CHECKPOINT_HEADER}");
    let _ = writeln!(s, "step {}", ck.adam.step);
    let _ = writeln!(s, "vocab_size {}", ck.model.vocab_size);
    let cfg = toml::to_string(&ck.model.cfg).map_err(|e| AxeError::Io(e.to_string()))?;
    let cfg_lines: Vec<&str> = cfg.lines().filter(|l| !l.trim().is_empty()).collect();
    let _ = writeln!(s, "config {}", cfg_lines.len());
    for l in cfg_lines {
        let _ = writeln!(s, "{l}");
    }
    write_values(&mut s, "params", &ck.model.params);
    write_values(&mut s, "adam_m", &ck.adam.m);
    write_values(&mut s, "adam_v", &ck.adam.v);
    Ok(s)
}

pub fn parse_checkpoint(text: &str) -> Result<Checkpoint> {
    let mut lines = Lines::new(text);
    let (n, header) = lines.next_line("header")?;
    if header != CHECKPOINT_HEADER {
        return Err(perr(n, format!("expected header {CHECKPOINT_HEADER:?}")));
    }
    let (n, args) = keyword(lines.next_line("step")?, "step")?;
    let step = parse_usize(n, args.first().copied().unwrap_or(""), "step")?;
    let (n, args) = keyword(lines.next_line("vocab_size")?, "vocab_size")?;
    let vocab_size = parse_usize(n, args.first().copied().unwrap_or(""), "vocab_size")?;
    let (n0, args) = keyword(lines.next_line("config")?, "config")?;
    let k = parse_usize(n0, args.first().copied().unwrap_or(""), "config line count")?;
    let mut cfg_text = String::new();
    for _ in 0..k {
        let (_, l) = lines.next_line("config line")?;
        cfg_text.push_str(l);
        cfg_text.push('\n');
    }
    let cfg: ToyModelConfig = toml::from_str(&cfg_text).map_err(|e| perr(n0, format!("config: {e}")))?;
    let params = read_values(&mut lines, "params")?;
    let m = read_values(&mut lines, "adam_m")?;
    let v = read_values(&mut lines, "adam_v")?;
    lines.expect_rest()?;
    if m.len() != params.len() || v.len() != params.len() {
        return Err(perr(lines.last, "optimizer state does not match parameter count"));
    }
    let model = ToyModel::from_params(&cfg, vocab_size, params)?;
    Ok(Checkpoint {
        model,
        adam: Adam { step, m, v },
    })
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    parse_checkpoint(&read_to_string(path)?)
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_file(path, &format_checkpoint(ck)?)
}

/// A tab-separated table with a header row.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Table {
            header: header.iter().map(|h| h.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn header_line(&self) -> String {
        self.header.join("\t")
    }

    pub fn row_line(row: &[String]) -> String {
        row.join("\t")
    }

    pub fn render(&self) -> String {
        let mut s = self.header_line();
        s.push('\n');
        for r in &self.rows {
            s.push_str(&Self::row_line(r));
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Table> {
        let mut it = text.lines().enumerate().filter(|(_, l)| !l.is_empty());
        let (_, head) = it.next().ok_or_else(|| perr(1, "missing header row"))?;
        let mut t = Table::new(&head.split('\t').collect::<Vec<_>>());
        for (k, l) in it {
            let row: Vec<String> = l.split('\t').map(str::to_string).collect();
            if row.len() != t.header.len() {
                return Err(perr(k + 1, format!("{} fields, expected {}", row.len(), t.header.len())));
            }
            t.rows.push(row);
        }
        Ok(t)
    }

    pub fn read(path: &Path) -> Result<Table> {
        Table::parse(&read_to_string(path)?).map_err(|e| match e {
            AxeError::Parse { line, msg } => AxeError::Parse {
                line,
                msg: format!("{}: {msg}", path.display()),
            },
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Instance {
        let vocab = Vocabulary::build(&["a", "b"]).unwrap();
        let target = TargetSequence::new(vocab.encode(&["a", "b"]).unwrap(), &vocab).unwrap();
        let matrix = LogProbMatrix::from_logits(2, 4, &[0.1, -0.3, 2.0, 0.7, 1.0, 0.0, -1.0, 3.3]).unwrap();
        Instance { vocab, target, matrix }
    }

    #[test]
    fn instance_round_trip_keeps_twelve_digits() {
        let inst = sample();
        let back = parse_instance(&format_instance(&inst)).unwrap();
        assert_eq!(back.vocab, inst.vocab);
        assert_eq!(back.target, inst.target);
        for (a, b) in back.matrix.values().iter().zip(inst.matrix.values()) {
            assert!((a - b).abs() <= 1e-11 * b.abs().max(1.0));
        }
    }

    #[test]
    fn comments_and_neg_infinity_are_accepted() {
        let text = "axe-instance v1\n# hi\n\nvocab 1\nx\ntarget x\nmatrix 1 3\n-inf -inf 0\n";
        let inst = parse_instance(text).unwrap();
        assert_eq!(inst.matrix.get(0, 0), f64::NEG_INFINITY);
        assert!(format_instance(&inst).contains("-inf -inf 0.00000000000e0"));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let cases = [
            ("bogus\n", 1),
            ("axe-instance v1\nvocab 1\nx\ntarget y\nmatrix 1 3\n0 0 0\n", 4),
            ("axe-instance v1\nvocab 1\nx\ntarget x\nmatrix 1 4\n0 0 0 0\n", 5),
            ("axe-instance v1\nvocab 1\nx\ntarget x\nmatrix 1 3\n0 0\n", 6),
            ("axe-instance v1\nvocab 1\nx\ntarget x\nmatrix 1 3\n0 zero 0\n", 6),
            ("axe-instance v1\nvocab 1\nx\ntarget x\nmatrix 2 3\n0 0 0\n", 7),
            ("axe-instance v1\nvocab 1\nx\ntarget x\nmatrix 1 3\n0 0 0\nextra\n", 7),
        ];
        for (text, line) in cases {
            match parse_instance(text) {
                Err(AxeError::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let cfg = ToyModelConfig {
            d_model: 8,
            d_ff: 8,
            n_layers: 1,
            max_len: 5,
            ..Default::default()
        };
        let model = ToyModel::new(&cfg, 6, 3).unwrap();
        let mut adam = Adam::new(model.params.len());
        adam.step = 7;
        adam.m[3] = 1.0 / 3.0;
        adam.v[5] = 1e-300;
        let ck = Checkpoint { model, adam };
        let back = parse_checkpoint(&format_checkpoint(&ck).unwrap()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn table_round_trip() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["1".into(), "x y".into()]);
        let back = Table::parse(&t.render()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.column("b"), Some(1));
        assert!(Table::parse("a\tb\n1\n").is_err());
    }
}

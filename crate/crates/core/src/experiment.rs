//! TOML-configured training runs, their on-disk artifacts, and comparative
//! reports over several runs.
//!
//! A run directory holds
//!
//! | file             | contents                                                   |
//! |------------------|------------------------------------------------------------|
//! | `config.toml`    | the full [`ExperimentConfig`]                              |
//! | `checkpoint.txt` | model parameters and optimizer state (see [`crate::io`])   |
//! | `train_log.tsv`  | one row per step: lr, losses, operator tallies             |
//! | `valid_log.tsv`  | periodic validation metrics                                |
//! | `decodes.tsv`    | final decodes of the validation set                        |
//! | `analysis.tsv`   | `metric<TAB>value` rows, `NA` for undefined values         |
//! | `analysis.txt`   | the same analysis as a readable report                     |

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::axe::OpCounts;
use crate::decode::{decode_all, DecodeConfig, DecodeResult};
use crate::error::{config_err, AxeError, Result};
use crate::io::{read_checkpoint, read_to_string, write_checkpoint, write_file, Checkpoint, Table};
use crate::metrics::{
    bucket_decay, bucketed_quality, position_confidence_profile, repetition_rate, sequence_quality, skip_op_rates,
    AnalysisReport, ConfidenceProfile, DEFAULT_BUCKET_EDGES,
};
use crate::objectives::{LossKind, ObjectiveVariant};
use crate::toy::{generate_task_data, Pair, SyntheticTaskSpec, ToyModel, ToyModelConfig, TrainOptions, Trainer};
use crate::types::{SourceSequence, Vocabulary};

pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const TRAIN_LOG_FILE: &str = "train_log.tsv";
pub const VALID_LOG_FILE: &str = "valid_log.tsv";
pub const DECODES_FILE: &str = "decodes.tsv";
pub const ANALYSIS_FILE: &str = "analysis.tsv";
pub const ANALYSIS_TEXT_FILE: &str = "analysis.txt";

const TRAIN_LOG_HEADER: [&str; 7] = ["step", "lr", "loss", "length_loss", "align", "skip_prediction", "skip_target"];
const VALID_LOG_HEADER: [&str; 5] = ["step", "exact_match", "token_f1", "bleu", "repetition_rate"];
const LOSS_WINDOW: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Offsets `-max_offset..=max_offset` in the confidence profile.
    pub max_offset: usize,
    pub bucket_edges: Vec<usize>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            max_offset: 2,
            bucket_edges: DEFAULT_BUCKET_EDGES.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub out_dir: PathBuf,
    pub train_count: usize,
    pub valid_count: usize,
    /// Validate every this many steps; the last step is always validated.
    pub valid_every: usize,
    /// Write a checkpoint every this many steps; 0 writes only at the end.
    pub checkpoint_every: usize,
    /// Divide each sequence loss by its target length.
    pub normalize: bool,
    pub objective: ObjectiveVariant,
    pub loss: LossKind,
    pub task: SyntheticTaskSpec,
    pub model: ToyModelConfig,
    pub decode: DecodeConfig,
    pub analysis: AnalysisConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            out_dir: PathBuf::from("run"),
            train_count: 3000,
            valid_count: 200,
            valid_every: 500,
            checkpoint_every: 500,
            normalize: true,
            objective: ObjectiveVariant::UnobservedPredictAll,
            loss: LossKind::default(),
            task: SyntheticTaskSpec::default(),
            model: ToyModelConfig::default(),
            decode: DecodeConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1).unwrap_or(0);
            AxeError::Parse {
                line,
                msg: e.message().to_string(),
            }
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_to_string(path)?).map_err(|e| match e {
            AxeError::Parse { line, msg } => AxeError::Parse {
                line,
                msg: format!("{}: {msg}", path.display()),
            },
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    /// Sets both the data seed and the model seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.task.seed = seed;
        self.model.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.task.validate(self.model.max_len)?;
        if let LossKind::Axe { delta } = self.loss {
            if !delta.is_finite() || delta < 0.0 {
                return Err(config_err("loss.delta", format!("must be finite and >= 0, got {delta}")));
            }
        }
        if self.model.steps == 0 {
            return Err(config_err("model.steps", "must be positive"));
        }
        self.decode.validate()?;
        if self.decode.max_len > self.model.max_len {
            return Err(config_err("decode.max_len", "must not exceed model.max_len"));
        }
        if self.train_count == 0 {
            return Err(config_err("train_count", "must be positive"));
        }
        if self.valid_count == 0 {
            return Err(config_err("valid_count", "must be positive"));
        }
        if self.analysis.bucket_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(config_err("analysis.bucket_edges", "must be strictly increasing"));
        }
        if self.out_dir.as_os_str().is_empty() {
            return Err(config_err("out_dir", "must not be empty"));
        }
        Ok(())
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            loss: self.loss,
            variant: self.objective,
            decode: self.decode,
            valid_every: self.valid_every,
            normalize: self.normalize,
        }
    }

    /// Optimizer steps covering one pass over the training set.
    pub fn epoch_steps(&self) -> usize {
        self.train_count.div_ceil(self.model.batch_size).max(1)
    }

    pub fn training_data(&self) -> Result<Vec<Pair>> {
        generate_task_data(&self.task, self.train_count, self.task.seed)
    }

    pub fn validation_data(&self) -> Result<Vec<Pair>> {
        generate_task_data(&self.task, self.valid_count, self.task.seed.wrapping_add(1))
    }
}

/// Paths of a run directory's artifacts.
#[derive(Debug, Clone)]
pub struct RunDir(pub PathBuf);

impl RunDir {
    pub fn file(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    /// Errors naming the first missing artifact.
    pub fn require(&self, names: &[&str]) -> Result<()> {
        for n in names {
            let p = self.file(n);
            if !p.is_file() {
                return Err(AxeError::Io(format!("missing {}", p.display())));
            }
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub model: ToyModel,
    pub analysis: AnalysisReport,
    /// Step of the checkpoint the run continued from, if any.
    pub resumed_from: Option<usize>,
}

fn f9(x: f64) -> String {
    format!("{x:.9}")
}

fn opt(x: Option<f64>) -> String {
    x.map(f9).unwrap_or_else(|| "NA".into())
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = OpenOptions::new()
        .append(true)
        .create(true)
        .open(path)
        .map_err(|e| AxeError::Io(format!("{}: {e}", path.display())))?;
    writeln!(f, "{line}").map_err(|e| AxeError::Io(format!("{}: {e}", path.display())))
}

/// Keeps the header and rows whose first column is a step `<= step`.
fn truncate_log(path: &Path, header: &[&str], step: usize) -> Result<()> {
    let mut out = Table::new(header);
    if path.is_file() {
        let t = Table::read(path)?;
        if t.header != out.header {
            return Err(AxeError::Io(format!("{}: unexpected header", path.display())));
        }
        for r in t.rows {
            let s: usize = r[0]
                .parse()
                .map_err(|_| AxeError::Io(format!("{}: bad step {:?}", path.display(), r[0])))?;
            if s <= step {
                out.push(r);
            }
        }
    }
    write_file(path, &out.render())
}

fn save_checkpoint(dir: &RunDir, trainer: &Trainer) -> Result<()> {
    let tmp = dir.file("checkpoint.txt.tmp");
    write_checkpoint(
        &tmp,
        &Checkpoint {
            model: trainer.model.clone(),
            adam: trainer.adam.clone(),
        },
    )?;
    fs::rename(&tmp, dir.file(CHECKPOINT_FILE)).map_err(|e| AxeError::Io(e.to_string()))
}

struct Prepared {
    dir: RunDir,
    vocab: Vocabulary,
    data: Vec<Pair>,
    valid: Vec<Pair>,
    trainer: Trainer,
    resumed_from: Option<usize>,
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let dir = RunDir(cfg.out_dir.clone());
    fs::create_dir_all(&dir.0).map_err(|e| AxeError::Io(format!("{}: {e}", dir.0.display())))?;
    let config_text = cfg.to_toml();
    let vocab = cfg.task.vocabulary()?;
    let data = cfg.training_data()?;
    let valid = cfg.validation_data()?;

    let ckpt_path = dir.file(CHECKPOINT_FILE);
    let (trainer, resumed_from) = if ckpt_path.is_file() {
        let existing = read_to_string(&dir.file(CONFIG_FILE)).unwrap_or_default();
        if existing != config_text {
            return Err(config_err("out_dir", "holds a checkpoint from a different config"));
        }
        let ck = read_checkpoint(&ckpt_path)?;
        if ck.model.cfg != cfg.model {
            return Err(config_err("model", "differs from the checkpoint's model config"));
        }
        if ck.adam.step > cfg.model.steps {
            return Err(config_err("model.steps", "is smaller than the checkpoint's step"));
        }
        truncate_log(&dir.file(TRAIN_LOG_FILE), &TRAIN_LOG_HEADER, ck.adam.step)?;
        truncate_log(&dir.file(VALID_LOG_FILE), &VALID_LOG_HEADER, ck.adam.step)?;
        let step = ck.adam.step;
        let mut t = Trainer::new(ck.model, cfg.train_options());
        t.adam = ck.adam;
        (t, Some(step))
    } else {
        write_file(&dir.file(CONFIG_FILE), &config_text)?;
        write_file(&dir.file(TRAIN_LOG_FILE), &(TRAIN_LOG_HEADER.join("\t") + "\n"))?;
        write_file(&dir.file(VALID_LOG_FILE), &(VALID_LOG_HEADER.join("\t") + "\n"))?;
        let model = ToyModel::new(&cfg.model, vocab.size(), cfg.model.seed)?;
        (Trainer::new(model, cfg.train_options()), None)
    };
    Ok(Prepared {
        dir,
        vocab,
        data,
        valid,
        trainer,
        resumed_from,
    })
}

/// Steps up to `stop` (capped at the configured total), logging and
/// checkpointing as configured. A checkpoint is always written at the
/// last step taken.
fn advance(cfg: &ExperimentConfig, p: &mut Prepared, stop: usize) -> Result<()> {
    let total = cfg.model.steps;
    let stop = stop.min(total);
    let (dir, trainer) = (&p.dir, &mut p.trainer);
    let mut stepped = false;
    while trainer.adam.step < stop {
        let step = trainer.adam.step + 1;
        let r = trainer.step(&p.data, step)?;
        stepped = true;
        append_line(
            &dir.file(TRAIN_LOG_FILE),
            &[
                r.step.to_string(),
                format!("{:.6e}", r.lr),
                f9(r.loss),
                f9(r.length_loss),
                r.counts.align.to_string(),
                r.counts.skip_prediction.to_string(),
                r.counts.skip_target.to_string(),
            ]
            .join("\t"),
        )?;
        if step == total || (cfg.valid_every > 0 && step % cfg.valid_every == 0) {
            let v = trainer.validate(&p.valid, step)?;
            append_line(
                &dir.file(VALID_LOG_FILE),
                &[v.step.to_string(), f9(v.exact_match), f9(v.token_f1), f9(v.bleu), f9(v.repetition_rate)].join("\t"),
            )?;
        }
        if step == stop || (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
            save_checkpoint(dir, trainer)?;
        }
    }
    if !stepped && !dir.file(CHECKPOINT_FILE).is_file() {
        save_checkpoint(dir, trainer)?;
    }
    Ok(())
}

/// Trains (or resumes) the configured run up to step `stop` and leaves a
/// checkpoint there, without decoding or analysis. Returns the step reached.
pub fn train_until(cfg: &ExperimentConfig, stop: usize) -> Result<usize> {
    let mut p = prepare(cfg)?;
    advance(cfg, &mut p, stop)?;
    Ok(p.trainer.adam.step)
}

/// Trains (or resumes) the configured run, then decodes the validation set
/// and writes every artifact. Output bytes depend only on the config.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let mut p = prepare(cfg)?;
    advance(cfg, &mut p, cfg.model.steps)?;
    let Prepared {
        dir,
        vocab,
        valid,
        trainer,
        resumed_from,
        ..
    } = p;

    let sources: Vec<SourceSequence> = valid.iter().map(|p| p.0.clone()).collect();
    let results = decode_all(&trainer.model, &sources, &cfg.decode)?;
    write_file(&dir.file(DECODES_FILE), &render_decodes(&vocab, &valid, &results))?;

    let log = Table::read(&dir.file(TRAIN_LOG_FILE))?;
    let analysis = analyze(cfg, &log, &valid, &results)?;
    write_file(&dir.file(ANALYSIS_FILE), &analysis_table(cfg, &log, &analysis).render())?;
    write_file(&dir.file(ANALYSIS_TEXT_FILE), &render_analysis_text(cfg, &analysis))?;
    Ok(RunOutcome {
        model: trainer.model,
        analysis,
        resumed_from,
    })
}

pub fn render_decodes(vocab: &Vocabulary, pairs: &[Pair], results: &[DecodeResult]) -> String {
    let mut t = Table::new(&["index", "source", "reference", "hypothesis", "raw_length", "score"]);
    for (k, (r, (x, y))) in results.iter().zip(pairs).enumerate() {
        t.push(vec![
            k.to_string(),
            vocab.decode(x.ids()).join(" "),
            vocab.decode(y.ids()).join(" "),
            vocab.decode(&r.tokens).join(" "),
            r.raw_length.to_string(),
            f9(r.candidate_scores[r.chosen_length_candidate].1),
        ]);
    }
    t.render()
}

/// Operator tallies over the last `window` rows of a training log table.
pub fn tail_counts(log: &Table, window: usize) -> Result<OpCounts> {
    let col = |name: &str| log.column(name).ok_or_else(|| AxeError::Io(format!("training log lacks column {name}")));
    let (a, sp, st) = (col("align")?, col("skip_prediction")?, col("skip_target")?);
    let parse = |s: &str| s.parse::<usize>().map_err(|_| AxeError::Io(format!("bad count {s:?} in training log")));
    let mut c = OpCounts::default();
    for r in log.rows.iter().rev().take(window) {
        c.add(&OpCounts {
            align: parse(&r[a])?,
            skip_prediction: parse(&r[sp])?,
            skip_target: parse(&r[st])?,
        });
    }
    Ok(c)
}

fn tail_loss(log: &Table) -> Option<f64> {
    let c = log.column("loss")?;
    let xs: Vec<f64> = log.rows.iter().rev().take(LOSS_WINDOW).filter_map(|r| r[c].parse().ok()).collect();
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

pub fn analyze(cfg: &ExperimentConfig, log: &Table, valid: &[Pair], results: &[DecodeResult]) -> Result<AnalysisReport> {
    let hyps: Vec<Vec<usize>> = results.iter().map(|r| r.tokens.clone()).collect();
    let refs: Vec<Vec<usize>> = valid.iter().map(|p| p.1.ids().to_vec()).collect();
    let lens: Vec<usize> = refs.iter().map(Vec::len).collect();
    let (st, sp) = if cfg.loss.is_axe() {
        let (st, sp) = skip_op_rates(&tail_counts(log, cfg.epoch_steps())?);
        (Some(st), Some(sp))
    } else {
        (None, None)
    };
    Ok(AnalysisReport {
        repetition_rate: repetition_rate(&hyps)?,
        position_confidence_profile: position_confidence_profile(results, &lens, cfg.analysis.max_offset)?,
        skip_target_rate: st,
        skip_prediction_rate: sp,
        quality: sequence_quality(&hyps, &refs)?,
        bucketed_quality: bucketed_quality(&hyps, &refs, &cfg.analysis.bucket_edges)?,
    })
}

fn profile_rows(t: &mut Table, name: &str, p: &ConfidenceProfile, values: &[Option<f64>]) {
    for (o, v) in p.offsets().iter().zip(values) {
        t.push(vec![format!("profile.{name}.{o}"), opt(*v)]);
    }
    t.push(vec![format!("neighbor_ratio.{name}"), opt(ConfidenceProfile::neighbor_ratio(values))]);
}

pub fn analysis_table(cfg: &ExperimentConfig, log: &Table, a: &AnalysisReport) -> Table {
    let mut t = Table::new(&["metric", "value"]);
    let delta = match cfg.loss {
        LossKind::Axe { delta } => Some(delta),
        LossKind::CrossEntropy => None,
    };
    t.push(vec!["loss".into(), if cfg.loss.is_axe() { "axe".into() } else { "ce".into() }]);
    t.push(vec!["delta".into(), opt(delta)]);
    t.push(vec!["objective".into(), cfg.objective.flag().into()]);
    t.push(vec!["task".into(), format!("{:?}", cfg.task.kind)]);
    t.push(vec!["steps".into(), cfg.model.steps.to_string()]);
    t.push(vec!["final_train_loss".into(), opt(tail_loss(log))]);
    t.push(vec!["repetition_rate".into(), f9(a.repetition_rate)]);
    t.push(vec!["skip_target_rate".into(), opt(a.skip_target_rate)]);
    t.push(vec!["skip_prediction_rate".into(), opt(a.skip_prediction_rate)]);
    t.push(vec!["exact_match".into(), f9(a.quality.exact_match)]);
    t.push(vec!["token_f1".into(), f9(a.quality.token_f1)]);
    t.push(vec!["bleu".into(), f9(a.quality.bleu)]);
    let p = &a.position_confidence_profile;
    profile_rows(&mut t, "all", p, &p.all);
    profile_rows(&mut t, "short", p, &p.short);
    profile_rows(&mut t, "long", p, &p.long);
    for b in &a.bucketed_quality {
        let q = b.quality;
        t.push(vec![format!("bucket.{}.count", b.label()), q.map(|q| q.count.to_string()).unwrap_or("NA".into())]);
        t.push(vec![format!("bucket.{}.bleu", b.label()), opt(q.map(|q| q.bleu))]);
        t.push(vec![format!("bucket.{}.exact_match", b.label()), opt(q.map(|q| q.exact_match))]);
    }
    t.push(vec!["bucket_decay".into(), opt(bucket_decay(&a.bucketed_quality))]);
    t
}

fn pct(x: Option<f64>) -> String {
    x.map(|v| format!("{:.2}%", 100.0 * v)).unwrap_or_else(|| "n/a".into())
}

fn render_profile(v: &[Option<f64>]) -> String {
    v.iter()
        .map(|x| x.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into()))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn render_analysis_text(cfg: &ExperimentConfig, a: &AnalysisReport) -> String {
    let mut s = String::new();
    let p = &a.position_confidence_profile;
    s += &format!("run: {} / {} / {:?}\n", cfg.loss.label(), cfg.objective, cfg.task.kind);
    s += &format!(
        "quality: exact_match {:.3}  token_f1 {:.3}  bleu {:.2}  ({} sentences)\n",
        a.quality.exact_match, a.quality.token_f1, a.quality.bleu, a.quality.count
    );
    s += &format!("repetition rate: {}\n", pct(Some(a.repetition_rate)));
    s += &format!(
        "skip rates (last epoch): target {}  prediction {}\n",
        pct(a.skip_target_rate),
        pct(a.skip_prediction_rate)
    );
    s += &format!("confidence profile, offsets {:?}\n", p.offsets());
    s += &format!("  all   {}\n", render_profile(&p.all));
    s += &format!("  short {}\n", render_profile(&p.short));
    s += &format!("  long  {}\n", render_profile(&p.long));
    s += "bleu by reference length:\n";
    for b in &a.bucketed_quality {
        match b.quality {
            Some(q) => s += &format!("  {:>7}  {:6.2}  (n={})\n", b.label(), q.bleu, q.count),
            None => s += &format!("  {:>7}  absent\n", b.label()),
        }
    }
    s
}

/// Parsed `analysis.tsv` of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunAnalysis {
    pub name: String,
    pub values: BTreeMap<String, String>,
    order: Vec<String>,
}

impl RunAnalysis {
    pub fn load(dir: &Path) -> Result<Self> {
        let rd = RunDir(dir.to_path_buf());
        rd.require(&[ANALYSIS_FILE])?;
        let t = Table::read(&rd.file(ANALYSIS_FILE))?;
        if t.header != ["metric", "value"] {
            return Err(AxeError::Io(format!("{}: unexpected header", rd.file(ANALYSIS_FILE).display())));
        }
        let name = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        let order = t.rows.iter().map(|r| r[0].clone()).collect();
        let values = t.rows.into_iter().map(|r| (r[0].clone(), r[1].clone())).collect();
        Ok(RunAnalysis { name, values, order })
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).and_then(|v| v.parse().ok())
    }

    pub fn is_axe(&self) -> bool {
        self.values.get("loss").map(String::as_str) == Some("axe")
    }

    pub fn is_ce(&self) -> bool {
        self.values.get("loss").map(String::as_str) == Some("ce")
    }

    /// Neighbor ratio on long references, falling back to all outputs.
    pub fn neighbor_ratio(&self) -> Option<f64> {
        self.get("neighbor_ratio.long").or_else(|| self.get("neighbor_ratio.all"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Finding {
    pub claim: String,
    pub pass: bool,
    pub detail: String,
}

impl std::fmt::Display for Finding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {} ({})", self.claim, if self.pass { "PASS" } else { "FAIL" }, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparativeReport {
    pub runs: Vec<RunAnalysis>,
    pub findings: Vec<Finding>,
}

fn lower_is(claim: &str, axe: (&str, f64), ce: (&str, f64)) -> Finding {
    Finding {
        claim: claim.to_string(),
        pass: axe.1 < ce.1,
        detail: format!("{} {:.4} vs {} {:.4}", axe.0, axe.1, ce.0, ce.1),
    }
}

impl ComparativeReport {
    pub fn from_dirs<P: AsRef<Path>>(dirs: &[P]) -> Result<Self> {
        let runs = dirs.iter().map(|d| RunAnalysis::load(d.as_ref())).collect::<Result<Vec<_>>>()?;
        Ok(Self::from_runs(runs))
    }

    pub fn from_runs(runs: Vec<RunAnalysis>) -> Self {
        let mut findings = Vec::new();
        for ce in runs.iter().filter(|r| r.is_ce()) {
            for axe in runs.iter().filter(|r| r.is_axe()) {
                let pair = |key: &str| Some(((axe.name.as_str(), axe.get(key)?), (ce.name.as_str(), ce.get(key)?)));
                if let Some((a, c)) = pair("repetition_rate") {
                    findings.push(lower_is("AXE repetition < CE repetition", a, c));
                }
                if let (Some(a), Some(c)) = (axe.neighbor_ratio(), ce.neighbor_ratio()) {
                    findings.push(lower_is(
                        "AXE neighbor/peak confidence < CE neighbor/peak confidence",
                        (&axe.name, a),
                        (&ce.name, c),
                    ));
                }
                if let Some((a, c)) = pair("bucket_decay") {
                    findings.push(lower_is("AXE length-bucket decay < CE length-bucket decay", a, c));
                }
            }
        }
        let mut axe: Vec<&RunAnalysis> = runs.iter().filter(|r| r.is_axe() && r.get("delta").is_some()).collect();
        axe.sort_by(|a, b| a.get("delta").unwrap().total_cmp(&b.get("delta").unwrap()));
        for w in axe.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let (dl, dh) = (lo.get("delta").unwrap(), hi.get("delta").unwrap());
            if dl < dh {
                if let (Some(rl), Some(rh)) = (lo.get("skip_target_rate"), hi.get("skip_target_rate")) {
                    findings.push(Finding {
                        claim: format!("skip-target rate at delta={dh} < at delta={dl}"),
                        pass: rh < rl,
                        detail: format!("{} {:.4} vs {} {:.4}", hi.name, rh, lo.name, rl),
                    });
                }
            }
        }
        ComparativeReport { runs, findings }
    }

    /// Metric rows by run columns, tab-separated.
    pub fn table(&self) -> Table {
        let mut header = vec!["metric".to_string()];
        header.extend(self.runs.iter().map(|r| r.name.clone()));
        let mut t = Table::new(&header);
        let mut keys: Vec<&String> = Vec::new();
        for r in &self.runs {
            for k in &r.order {
                if !keys.contains(&k) {
                    keys.push(k);
                }
            }
        }
        for k in keys {
            let mut row = vec![k.clone()];
            row.extend(self.runs.iter().map(|r| r.values.get(k).cloned().unwrap_or_else(|| "NA".into())));
            t.push(row);
        }
        t
    }

    pub fn text(&self) -> String {
        let t = self.table();
        let widths: Vec<usize> = (0..t.header.len())
            .map(|c| t.rows.iter().map(|r| r[c].len()).chain([t.header[c].len()]).max().unwrap_or(0))
            .collect();
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut s = line(&t.header) + "\n";
        for r in &t.rows {
            s += &(line(r) + "\n");
        }
        if self.runs.len() > 1 {
            s += "\nfindings:\n";
            if self.findings.is_empty() {
                s += "  none applicable\n";
            }
            for f in &self.findings {
                s += &format!("  {f}\n");
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn defaults_fill_missing_fields() {
        let cfg = ExperimentConfig::from_toml("out_dir = \"x\"\n[loss]\nkind = \"axe\"\n").unwrap();
        assert_eq!(cfg.loss, LossKind::Axe { delta: 3.0 });
        assert_eq!(cfg.decode.lambda, 1.05);
        assert_eq!(cfg.decode.num_length_candidates, 5);
        let ce = ExperimentConfig::from_toml("[loss]\nkind = \"cross-entropy\"\n").unwrap();
        assert_eq!(ce.loss, LossKind::CrossEntropy);
    }

    #[test]
    fn invalid_fields_are_named() {
        let cfg = ExperimentConfig {
            loss: LossKind::Axe { delta: -1.0 },
            ..ExperimentConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(AxeError::Config { field, .. }) if field == "loss.delta"));
        let mut cfg = ExperimentConfig::default();
        cfg.task.max_len = 70;
        assert!(matches!(cfg.validate(), Err(AxeError::Config { field, .. }) if field == "task.max_len"));
        let mut cfg = ExperimentConfig::default();
        cfg.decode.lambda = 0.5;
        assert!(matches!(cfg.validate(), Err(AxeError::Config { field, .. }) if field == "decode.lambda"));
    }

    #[test]
    fn unknown_keys_are_parse_errors_with_lines() {
        match ExperimentConfig::from_toml("train_count = 5\n\nbogus = 1\n") {
            Err(AxeError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    fn run(name: &str, kv: &[(&str, &str)]) -> RunAnalysis {
        RunAnalysis {
            name: name.into(),
            values: kv.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            order: kv.iter().map(|(k, _)| k.to_string()).collect(),
        }
    }

    #[test]
    fn findings_compare_axe_against_ce() {
        let ce = run("ce", &[("loss", "ce"), ("delta", "NA"), ("repetition_rate", "0.3"), ("neighbor_ratio.long", "0.5")]);
        let a1 = run("a1", &[("loss", "axe"), ("delta", "1"), ("repetition_rate", "0.1"), ("skip_target_rate", "0.2")]);
        let a5 = run("a5", &[("loss", "axe"), ("delta", "5"), ("repetition_rate", "0.4"), ("skip_target_rate", "0.05")]);
        let r = ComparativeReport::from_runs(vec![ce, a1, a5]);
        let flags: Vec<(String, bool)> = r.findings.iter().map(|f| (f.claim.clone(), f.pass)).collect();
        assert_eq!(
            flags,
            vec![
                ("AXE repetition < CE repetition".to_string(), true),
                ("AXE repetition < CE repetition".to_string(), false),
                ("skip-target rate at delta=5 < at delta=1".to_string(), true),
            ]
        );
        assert!(r.text().contains("AXE repetition < CE repetition: PASS"));
        assert_eq!(r.table().header, vec!["metric", "ce", "a1", "a5"]);
    }

    #[test]
    fn single_run_report_has_no_findings() {
        let r = ComparativeReport::from_runs(vec![run("x", &[("loss", "axe"), ("repetition_rate", "0.1")])]);
        assert!(r.findings.is_empty());
        assert!(!r.text().contains("findings"));
    }
}

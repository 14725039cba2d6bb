use std::fmt::Write as _;
use std::path::Path;

use axe::axe::{axe_align, axe_gradient, axe_loss, brute_force_paths, AxeConfig, Schedule};
use axe::decode::{decode_all, DecodeConfig};
use axe::experiment::{
    run_experiment, ComparativeReport, ExperimentConfig, RunDir, CHECKPOINT_FILE, CONFIG_FILE,
};
use axe::io::{read_checkpoint, read_instance, read_to_string, write_file, Instance, Table};
use axe::objectives::LossKind;
use axe::types::{LogProbMatrix, SourceSequence, TargetSequence, Vocabulary};
use axe::AxeError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Command, InstanceArgs};

/// Relative error below which `gradcheck` succeeds.
const GRADCHECK_TOL: f64 = 1e-4;
/// Smallest gap between the optimal and runner-up alignment costs that
/// `gradcheck` accepts as a unique optimum.
const TIE_MARGIN: f64 = 1e-3;
const SELFTEST_TOL: f64 = 1e-9;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub msg: String,
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError { code: 1, msg: msg.into() }
    }

    fn semantic(msg: impl Into<String>) -> Self {
        CliError { code: 2, msg: msg.into() }
    }
}

impl From<AxeError> for CliError {
    fn from(e: AxeError) -> Self {
        let code = match e {
            AxeError::Parse { .. } | AxeError::Io(_) | AxeError::Config { .. } => 1,
            _ => 2,
        };
        CliError { code, msg: e.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

pub fn run(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Loss { inst, schedule } => {
            let schedule: Schedule = schedule.parse()?;
            print!("{}", loss_report(&inst, schedule)?);
        }
        Command::Align { inst } => print!("{}", align_report(&inst)?),
        Command::Gradcheck { inst, eps } => gradcheck(&inst, eps)?,
        Command::Train {
            config,
            out,
            seed,
            loss,
            delta,
            objective,
            lambda,
            length_candidates,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(out) = out {
                cfg.out_dir = out;
            }
            if let Some(seed) = seed {
                cfg = cfg.with_seed(seed);
            }
            match loss.as_deref() {
                None => {}
                Some("axe") => {
                    if !cfg.loss.is_axe() {
                        cfg.loss = LossKind::default();
                    }
                }
                Some("ce") => cfg.loss = LossKind::CrossEntropy,
                Some(other) => return Err(CliError::usage(format!("unknown loss {other:?}; expected axe or ce"))),
            }
            if let Some(delta) = delta {
                if cfg.loss == LossKind::CrossEntropy {
                    return Err(CliError::usage("--delta applies only to the axe loss"));
                }
                cfg.loss = LossKind::Axe { delta };
            }
            if let Some(o) = objective {
                cfg.objective = o.parse()?;
            }
            if let Some(l) = lambda {
                cfg.decode.lambda = l;
            }
            if let Some(k) = length_candidates {
                cfg.decode.num_length_candidates = k;
            }
            let outcome = run_experiment(&cfg)?;
            if let Some(step) = outcome.resumed_from {
                eprintln!("resumed from step {step}");
            }
            let a = &outcome.analysis;
            println!("run directory: {}", cfg.out_dir.display());
            println!(
                "exact_match {:.4}  token_f1 {:.4}  bleu {:.2}  repetition_rate {:.4}",
                a.quality.exact_match, a.quality.token_f1, a.quality.bleu, a.repetition_rate
            );
        }
        Command::Decode {
            run_dir,
            input,
            lambda,
            length_candidates,
            out,
        } => {
            let table = decode_run(&run_dir, input.as_deref(), lambda, length_candidates)?;
            match out {
                Some(p) => write_file(&p, &table)?,
                None => print!("{table}"),
            }
        }
        Command::Report { run_dirs, out } => {
            let report = ComparativeReport::from_dirs(&run_dirs)?;
            let text = report.text();
            print!("{text}");
            if let Some(dir) = out {
                write_file(&dir.join("report.txt"), &text)?;
                write_file(&dir.join("report.tsv"), &report.table().render())?;
            }
        }
        Command::Selftest { seed, count } => selftest(seed, count)?,
    }
    Ok(())
}

fn load(inst: &InstanceArgs) -> CliResult<(Instance, AxeConfig)> {
    let instance = read_instance(&inst.instance)?;
    let cfg = AxeConfig::with_delta(inst.delta)?;
    Ok((instance, cfg))
}

fn loss_report(args: &InstanceArgs, schedule: Schedule) -> CliResult<String> {
    let (inst, cfg) = load(args)?;
    let cfg = AxeConfig { schedule, ..cfg };
    let (a, trace) = axe_align(&inst.target, &inst.matrix, &cfg)?;
    let mut s = format!("loss {:.9}\n", a.loss());
    for op in &trace.ops {
        let _ = writeln!(s, "{op}");
    }
    Ok(s)
}

fn align_report(args: &InstanceArgs) -> CliResult<String> {
    let (inst, cfg) = load(args)?;
    let (_, trace) = axe_align(&inst.target, &inst.matrix, &cfg)?;
    let mut t = Table::new(&["op", "i", "j", "cost"]);
    let pos = |x: Option<usize>| x.map(|v| v.to_string()).unwrap_or_else(|| "-".into());
    for op in &trace.ops {
        t.push(vec![op.kind.name().to_string(), pos(op.i), pos(op.j), format!("{:.9}", op.cost)]);
    }
    Ok(t.render())
}

fn gradcheck(args: &InstanceArgs, eps: f64) -> CliResult<()> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(CliError::usage("--eps must be finite and positive"));
    }
    let (inst, cfg) = load(args)?;
    let (y, p) = (&inst.target, &inst.matrix);
    let (loss, grad, trace) = axe_gradient(y, p, &cfg)?;
    if !loss.is_finite() {
        return Err(CliError::semantic("loss is infinite; no gradient to check"));
    }
    if !trace.is_unique(TIE_MARGIN) {
        return Err(CliError::semantic(format!(
            "non-unique optimum (runner-up alignment within {:.3e} of the best)",
            trace.margin
        )));
    }
    let (m, v) = (p.m(), p.vocab_size());
    let mut worst: f64 = 0.0;
    let mut at = (0, 0);
    let mut checked = 0;
    for j in 0..m {
        for t in 0..v {
            let x = p.get(j, t);
            if !x.is_finite() {
                continue;
            }
            let shifted = |h: f64| -> CliResult<f64> {
                let mut q: LogProbMatrix = p.clone();
                q.set(j, t, x + h);
                Ok(axe_loss(y, &q, &cfg)?)
            };
            let fd = (shifted(eps)? - shifted(-eps)?) / (2.0 * eps);
            let a = grad.get(j + 1, t);
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            checked += 1;
            if err > worst {
                worst = err;
                at = (j + 1, t);
            }
        }
    }
    println!("loss {loss:.9}");
    println!("entries {checked}");
    println!("alignment_margin {:.6e}", trace.margin);
    println!("max_relative_error {worst:.6e} at prediction {} token {}", at.0, at.1);
    if worst < GRADCHECK_TOL {
        println!("PASS");
        Ok(())
    } else {
        Err(CliError::semantic(format!(
            "max relative error {worst:.3e} exceeds {GRADCHECK_TOL:e}"
        )))
    }
}

fn decode_run(dir: &Path, input: Option<&Path>, lambda: Option<f64>, k: Option<usize>) -> CliResult<String> {
    let rd = RunDir(dir.to_path_buf());
    rd.require(&[CONFIG_FILE, CHECKPOINT_FILE])?;
    let cfg = ExperimentConfig::load(&rd.file(CONFIG_FILE))?;
    let ck = read_checkpoint(&rd.file(CHECKPOINT_FILE))?;
    let vocab = cfg.task.vocabulary()?;
    let mut dcfg: DecodeConfig = cfg.decode;
    if let Some(l) = lambda {
        dcfg.lambda = l;
    }
    if let Some(k) = k {
        dcfg.num_length_candidates = k;
    }
    let sources: Vec<SourceSequence> = match input {
        Some(path) => {
            let text = read_to_string(path)?;
            let mut out = Vec::new();
            for (n, line) in text.lines().enumerate() {
                let toks: Vec<&str> = line.split_whitespace().collect();
                if toks.is_empty() {
                    continue;
                }
                let ids = vocab
                    .encode(&toks)
                    .and_then(|ids| SourceSequence::new(ids, &vocab))
                    .map_err(|e| AxeError::Parse { line: n + 1, msg: e.to_string() })?;
                out.push(ids);
            }
            out
        }
        None => cfg.validation_data()?.into_iter().map(|p| p.0).collect(),
    };
    let results = decode_all(&ck.model, &sources, &dcfg)?;
    let mut t = Table::new(&["index", "source", "hypothesis", "raw_length", "score"]);
    for (k, (x, r)) in sources.iter().zip(&results).enumerate() {
        t.push(vec![
            k.to_string(),
            vocab.decode(x.ids()).join(" "),
            vocab.decode(&r.tokens).join(" "),
            r.raw_length.to_string(),
            format!("{:.9}", r.candidate_scores[r.chosen_length_candidate].1),
        ]);
    }
    Ok(t.render())
}

fn random_instance(rng: &mut ChaCha8Rng) -> CliResult<(TargetSequence, LogProbMatrix, AxeConfig)> {
    let n = rng.random_range(1..=6);
    let m = rng.random_range(1..=6);
    let v = rng.random_range(3..=8);
    let delta = [0.5, 1.0, 2.0, 5.0][rng.random_range(0..4)];
    let vocab = Vocabulary::synthetic(v - 2)?;
    let y: Vec<usize> = (0..n).map(|_| rng.random_range(2..v)).collect();
    let logits: Vec<f64> = (0..m * v).map(|_| rng.random_range(-4.0..4.0)).collect();
    let p = LogProbMatrix::from_logits(m, v, &logits)?;
    Ok((TargetSequence::new(y, &vocab)?, p, AxeConfig::with_delta(delta)?))
}

fn selftest(seed: u64, count: usize) -> CliResult<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..count {
        let (y, p, cfg) = random_instance(&mut rng)?;
        let naive = axe_loss(&y, &p, &cfg)?;
        let diag = axe_loss(&y, &p, &AxeConfig { schedule: Schedule::Antidiagonal, ..cfg })?;
        let (oracle, _) = brute_force_paths(&y, &p, &cfg)?;
        let err = (naive - oracle).abs();
        worst = worst.max(err);
        if err > SELFTEST_TOL || naive.to_bits() != diag.to_bits() {
            failures += 1;
        }
    }
    println!("instances {count}");
    println!("max_abs_difference {worst:.3e}");
    if failures == 0 {
        println!("oracle equivalence: PASS");
        Ok(())
    } else {
        println!("oracle equivalence: FAIL ({failures} mismatches)");
        Err(CliError::semantic(format!("{failures} of {count} instances disagree with exhaustive search")))
    }
}

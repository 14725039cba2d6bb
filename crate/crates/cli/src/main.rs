mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

const INSTANCE_FORMAT: &str = "\
INSTANCE FILE FORMAT
  axe-instance v1
  vocab K            followed by K lines, one user token each
  target t1 t2 ...   space-separated tokens from the vocabulary
  matrix M V         followed by M rows of V log-probabilities
Columns follow id order: 0 is <eps>, 1 is <mask>, then the listed tokens.
Lines starting with # and blank lines are ignored. `-inf` is accepted.";

const CONFIG_FORMAT: &str = "\
CONFIG FILE FORMAT (TOML; every key is optional)
  out_dir, train_count, valid_count, valid_every, checkpoint_every, normalize
  objective = \"all-unobserved\" | \"all-partial\" | \"masks-partial\"
  [loss]     kind = \"axe\" (delta, default 3) | \"cross-entropy\"
  [task]     kind = \"copy\" | \"shifted-copy\" | \"stochastic-expansion\" | \"two-orderings\",
             source_vocab_size, min_len, max_len, expansion_prob, seed
  [model]    d_model, d_ff, n_layers, max_len, label_smoothing, learning_rate,
             warmup_steps, adam_beta1, adam_beta2, adam_eps, weight_decay,
             steps, batch_size, length_loss_weight, init_std, seed
  [decode]   lambda (default 1.05), num_length_candidates (default 5), max_len
  [analysis] max_offset, bucket_edges

RUN DIRECTORY
  config.toml     the resolved config
  checkpoint.txt  `axe-checkpoint v1`, step, vocab_size, a TOML config block,
                  then params / adam_m / adam_v blocks of whitespace-separated values
  train_log.tsv   step lr loss length_loss align skip_prediction skip_target
  valid_log.tsv   step exact_match token_f1 bleu repetition_rate
  decodes.tsv     index source reference hypothesis raw_length score
  analysis.tsv    metric value   (NA marks undefined values)
  analysis.txt    readable summary
A run directory that already holds a checkpoint is resumed.";

const EXIT_CODES: &str = "\
EXIT CODES
  0 success, 1 usage or parse error, 2 semantic failure (e.g. tied optimum,
  failed check, divergence)";

#[derive(Parser, Debug)]
#[command(
    name = "axe",
    version,
    about = "Aligned cross entropy: alignment DP, gradient checks and toy non-autoregressive training",
    after_help = EXIT_CODES
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct InstanceArgs {
    /// Instance file
    instance: PathBuf,
    /// Skip-target penalty
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the AXE loss of an instance and the ops of its optimal alignment
    #[command(after_help = INSTANCE_FORMAT)]
    Loss {
        #[command(flatten)]
        inst: InstanceArgs,
        /// DP fill order: naive | antidiagonal
        #[arg(long, default_value = "naive")]
        schedule: String,
    },
    /// Print the optimal alignment as a table of op, i, j, cost
    #[command(after_help = INSTANCE_FORMAT)]
    Align {
        #[command(flatten)]
        inst: InstanceArgs,
    },
    /// Compare the analytic gradient with central finite differences
    #[command(after_help = INSTANCE_FORMAT)]
    Gradcheck {
        #[command(flatten)]
        inst: InstanceArgs,
        /// Finite-difference step
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
    },
    /// Train a toy model from a TOML experiment config
    #[command(after_help = CONFIG_FORMAT)]
    Train {
        config: PathBuf,
        /// Output directory (overrides out_dir)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Data and model seed
        #[arg(long)]
        seed: Option<u64>,
        /// Loss: axe | ce
        #[arg(long)]
        loss: Option<String>,
        /// Train with AXE at this skip-target penalty
        #[arg(long)]
        delta: Option<f64>,
        /// all-unobserved | all-partial | masks-partial
        #[arg(long)]
        objective: Option<String>,
        /// Length multiplier used for validation decoding
        #[arg(long)]
        lambda: Option<f64>,
        /// Number of length candidates used for validation decoding
        #[arg(long)]
        length_candidates: Option<usize>,
    },
    /// Decode sources with a trained run
    #[command(after_help = "SOURCES FILE\n  one sequence per line, space-separated tokens (t0, t1, ...)\n  without --input the run's validation set is decoded\n\nOUTPUT\n  index source hypothesis raw_length score (tab-separated)")]
    Decode {
        run_dir: PathBuf,
        /// Sources file
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        length_candidates: Option<usize>,
        /// Write the table here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analyses of finished runs and flag directional findings
    #[command(after_help = "OUTPUT\n  a side-by-side metric table and PASS/FAIL findings on stdout;\n  with --out DIR also report.txt and report.tsv (metric, one column per run)")]
    Report {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the DP against exhaustive search on random small instances
    Selftest {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Number of random instances
        #[arg(long, default_value_t = 500)]
        count: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}

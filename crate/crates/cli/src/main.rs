use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use pglab::config::RunConfig;
use pglab::metrics::format_sig;
use pglab::pipeline::{self, EvalInputs};
use pglab::Error;

/// Pointer-generator summarization lab.
#[derive(Parser)]
#[command(name = "pglab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// `--key value` pairs overriding the config file.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic train/val/test corpus.
    GenData(Common),
    /// Train a model (both phases) and write its checkpoint and log.
    Train(Common),
    /// Beam-decode the configured split.
    Decode(Common),
    /// Score summaries against references and sources.
    Eval {
        #[arg(long)]
        summaries: Option<PathBuf>,
        #[arg(long)]
        references: Option<PathBuf>,
        #[arg(long)]
        sources: Option<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Signed-rank test between two per-example score files.
    Compare {
        scores_a: PathBuf,
        scores_b: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Mean head-to-head KL of teacher-forced attention.
    AttnKl {
        checkpoint_a: PathBuf,
        /// Single-head model compared against every head of the first.
        #[arg(long)]
        single: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference check of the full loss on the tiny model.
    Gradcheck(Common),
    /// Train, decode and score the whole variant grid.
    Experiment(Common),
}

/// Below this the gradient check passes.
const GRADCHECK_TOLERANCE: f64 = 1e-4;

fn load_config(common: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut it = common.overrides.iter();
    while let Some(flag) = it.next() {
        let Some(key) = flag.strip_prefix("--") else {
            return Err(Error::InvalidArgument(format!("expected `--key value`, got `{flag}`")).into());
        };
        let (key, value) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| Error::InvalidArgument(format!("`--{key}` needs a value")))?;
                (key.to_string(), v.clone())
            }
        };
        cfg.set(&key.replace('-', "_"), &value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn save_config(cfg: &RunConfig) -> anyhow::Result<()> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.out("config.txt");
    std::fs::write(&path, cfg.to_text()).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn progress_line(row: &pglab::trainer::LogRow) {
    let opt = |v: Option<f64>| v.map_or("-".into(), format_sig);
    eprintln!(
        "step {} phase {} nll {} cov {} point {} pgen {}",
        row.step + 1,
        row.phase,
        format_sig(row.nll),
        opt(row.cov_loss),
        opt(row.point_loss),
        opt(row.train_pgen)
    );
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData(c) => {
            let cfg = load_config(&c)?;
            save_config(&cfg)?;
            let s = pipeline::cmd_gen_data(&cfg)?;
            println!(
                "wrote {} train, {} val, {} test examples to {}",
                s.train.len(),
                s.val.len(),
                s.test.len(),
                cfg.data_path().display()
            );
        }
        Command::Train(c) => {
            let cfg = load_config(&c)?;
            save_config(&cfg)?;
            let out = pipeline::cmd_train(&cfg, &mut progress_line)?;
            println!("trained to step {}; checkpoint {}", out.state.step, cfg.checkpoint_path().display());
        }
        Command::Decode(c) => {
            let cfg = load_config(&c)?;
            let d = pipeline::cmd_decode(&cfg)?;
            println!("decoded {} examples into {}", d.len(), cfg.out("summaries.txt").display());
        }
        Command::Eval {
            summaries,
            references,
            sources,
            trace,
            common,
        } => {
            let cfg = load_config(&common)?;
            let mut inputs = EvalInputs::from_config(&cfg);
            if let Some(p) = summaries {
                inputs.summaries = p;
            }
            if let Some(p) = references {
                inputs.references = p;
            }
            if let Some(p) = sources {
                inputs.sources = p;
            }
            if trace.is_some() {
                inputs.trace = trace;
            }
            let (report, _) = pipeline::cmd_eval(&cfg, &inputs)?;
            print!("{}", report.to_tsv());
        }
        Command::Compare {
            scores_a,
            scores_b,
            common,
        } => {
            let cfg = load_config(&common)?;
            let rows = pipeline::cmd_compare(&cfg, &scores_a, &scores_b)?;
            print!("{}", pipeline::format_comparison(&rows));
        }
        Command::AttnKl {
            checkpoint_a,
            single,
            common,
        } => {
            let cfg = load_config(&common)?;
            let m = pipeline::cmd_attn_kl(&cfg, &checkpoint_a, single.as_deref())?;
            print!("{}", pglab::metrics::format_kl_matrix(&m));
        }
        Command::Gradcheck(c) => {
            let cfg = load_config(&c)?;
            let rows = pipeline::cmd_gradcheck(&cfg)?;
            let mut worst: f64 = 0.0;
            for (name, err) in &rows {
                println!("{name}\t{err:.3e}");
                worst = worst.max(*err);
            }
            println!("max rel err {worst:.3e}");
            if !(worst < GRADCHECK_TOLERANCE) {
                bail!("gradient error {worst:.3e} exceeds {GRADCHECK_TOLERANCE:e}");
            }
        }
        Command::Experiment(c) => {
            let cfg = load_config(&c)?;
            save_config(&cfg)?;
            let out = pipeline::cmd_experiment(&cfg, &mut |msg| eprintln!("{msg}"))?;
            print!("{}", out.table);
        }
    }
    Ok(())
}

/// 1 for bad input, 2 for failures while running.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(
            Error::InvalidArgument(_) | Error::Parse { .. } | Error::Misaligned(_) | Error::DegenerateSample(_),
        ) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}


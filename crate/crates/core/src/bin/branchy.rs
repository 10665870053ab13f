use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use branchy::config::RunConfig;
use branchy::report::{run_eval, run_report};
use branchy::workflow::{run_synth, run_train};

#[derive(Parser, Debug)]
#[command(name = "branchy", version, about = "Multi-exit intent classifier")]
#[command(after_help = "train and synth also accept config overrides as trailing `--key value` pairs.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train, calibrate and save a model.
    Train {
        /// Flat key=value config file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(skip)]
        overrides: Vec<(String, String)>,
    },
    /// Evaluate a saved model on a TSV file and write a JSON report.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn JSON reports into metrics, cost and exit-distribution CSVs.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Write a synthetic intent corpus as TSV.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(skip)]
        overrides: Vec<(String, String)>,
    },
}

const OWN_FLAGS: &[&str] = &["--config", "--out", "--seed", "--help", "-h"];

/// Pulls `--key value` pairs that are not the subcommand's own flags out of
/// argv so clap only sees what it knows about.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let takes_overrides = matches!(args.get(1).map(String::as_str), Some("train" | "synth"));
    if !takes_overrides {
        return (args, Vec::new());
    }
    let mut kept = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let own = OWN_FLAGS.iter().any(|f| a == *f || a.starts_with(&format!("{f}=")));
        match a.strip_prefix("--") {
            Some(key) if !own && !key.is_empty() => {
                let (k, v) = match key.split_once('=') {
                    Some((k, v)) => (k.to_string(), Some(v.to_string())),
                    None => (key.to_string(), None),
                };
                let v = v.or_else(|| it.next()).unwrap_or_default();
                overrides.push((k.replace('-', "_"), v));
            }
            _ => kept.push(a),
        }
    }
    (kept, overrides)
}

fn resolve_config(path: Option<&Path>, seed: u64, overrides: &[(String, String)]) -> branchy::Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_pairs(overrides.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    cfg.seed = Some(seed);
    Ok(cfg)
}

fn run(command: Command) -> anyhow::Result<()> {
    let mut stdout = io::stdout().lock();
    match command {
        Command::Train {
            config,
            out,
            seed,
            overrides,
        } => {
            let cfg = resolve_config(config.as_deref(), seed, &overrides)?;
            let outcome = run_train(&cfg, &out, &mut stdout).context("train")?;
            writeln!(
                stdout,
                "saved {} ({} train / {} dev examples, {} exits)",
                out.display(),
                outcome.splits.train.len(),
                outcome.splits.dev.len(),
                outcome.saved.model.num_exits()
            )?;
        }
        Command::Eval { model, data, out } => {
            let r = run_eval(&model, &data, &out).context("eval")?;
            let dist: Vec<String> = r
                .exit_distribution
                .probs
                .iter()
                .map(|p| format!("{:.2}%", 100.0 * p))
                .collect();
            writeln!(
                stdout,
                "accuracy {:.4}  macro_f1 {:.4}  forced_final_accuracy {:.4}",
                r.accuracy, r.macro_f1, r.forced_final_accuracy
            )?;
            writeln!(
                stdout,
                "exits [{}]  expected_flops {:.1}  baseline_flops {:.1}  savings {:.2}%",
                dist.join(", "),
                r.expected_flops,
                r.baseline_flops,
                100.0 * r.relative_savings
            )?;
            writeln!(stdout, "wrote {}", out.display())?;
        }
        Command::Report { reports, out_dir } => {
            for p in run_report(&reports, &out_dir).context("report")? {
                writeln!(stdout, "wrote {}", p.display())?;
            }
        }
        Command::Synth {
            config,
            out,
            seed,
            overrides,
        } => {
            let cfg = resolve_config(config.as_deref(), seed, &overrides)?;
            let data = run_synth(&cfg, &out).context("synth")?;
            writeln!(
                stdout,
                "wrote {} ({} utterances, {} classes)",
                out.display(),
                data.len(),
                data.num_classes()
            )?;
        }
    }
    Ok(())
}

fn exit_status(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<branchy::Error>())
        .map_or(1, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    let (args, overrides) = split_overrides(std::env::args().collect());
    let mut cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match &mut cli.command {
        Command::Train { overrides: o, .. } | Command::Synth { overrides: o, .. } => *o = overrides,
        _ => {}
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_status(&e))
        }
    }
}

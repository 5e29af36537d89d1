//! `dmae` command line: synthesize data, train, evaluate, ablate, sweep,
//! gradient-check and plot.
//!
//! Every subcommand that takes a config also accepts trailing `--key value`
//! (or `--key=value`) pairs overriding individual config keys.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dmae::config::load_toml_with_overrides;
use dmae::datasets::synthetic::{describe, generate_synthetic, SyntheticSpec, TEST_FILE};
use dmae::datasets::{load_interactions, load_modal_embeddings, Modality};
use dmae::harness::{self, SweepAxis, SweepTable};
use dmae::{Ablation, Checkpoint, DmaeError, RunConfig};
use log::info;

#[derive(Parser)]
#[command(name = "dmae", version, about = "Multimodal interest CTR model harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// TOML file of generator settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, hide = true)]
        overrides: Vec<String>,
    },
    /// Train one model; writes checkpoint, history and resolved config to `--out`.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, hide = true)]
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint on an interaction file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory holding the embedding tables.
        #[arg(long)]
        data: PathBuf,
        /// Interaction file to score; defaults to the directory's test split.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Where to write metrics.txt / metrics.json.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Drop decoder tensors before scoring.
        #[arg(long)]
        strip_decoder: bool,
    },
    /// Train and test every ablation variant over several seeds.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        /// Subset of variants; all six when omitted.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, hide = true)]
        overrides: Vec<String>,
    },
    /// Grid sweep over one hyperparameter axis: lambda_dec, l, n, l-n or dim.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        axis: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, hide = true)]
        overrides: Vec<String>,
    },
    /// Finite-difference gradient check on a micro model.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Check every ablation variant.
        #[arg(long)]
        all: bool,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, hide = true)]
        overrides: Vec<String>,
    },
    /// Plot every sweep-*.json in a directory as SVG.
    Report {
        #[arg(long)]
        sweeps: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn usage(msg: impl Into<String>) -> DmaeError {
    DmaeError::InvalidConfig(msg.into())
}

/// Turns `--key value` / `--key=value` tokens into pairs.
fn parse_overrides(tokens: &[String]) -> Result<Vec<(String, String)>, DmaeError> {
    let mut out = Vec::new();
    let mut it = tokens.iter();
    while let Some(tok) = it.next() {
        let key = tok
            .strip_prefix("--")
            .ok_or_else(|| usage(format!("expected --key, got {tok:?}")))?;
        match key.split_once('=') {
            Some((k, v)) => out.push((k.to_string(), v.to_string())),
            None => {
                let value = it
                    .next()
                    .ok_or_else(|| usage(format!("--{key} needs a value")))?;
                out.push((key.to_string(), value.clone()));
            }
        }
    }
    Ok(out)
}

fn run_config(config: Option<&Path>, tokens: &[String]) -> Result<RunConfig, DmaeError> {
    RunConfig::load_with_overrides(config, &parse_overrides(tokens)?)
}

fn run(cli: Cli) -> Result<(), DmaeError> {
    match cli.command {
        Command::Synth {
            out,
            config,
            overrides,
        } => {
            let spec: SyntheticSpec = load_toml_with_overrides(config.as_deref(), &parse_overrides(&overrides)?)?;
            let data = generate_synthetic(&spec)?;
            data.write(&out)?;
            print!("{}", describe(&data));
        }
        Command::Train {
            config,
            out,
            overrides,
        } => {
            let pairs = parse_overrides(&overrides)?;
            if !pairs.iter().any(|(k, _)| k == "seed") {
                return Err(usage("train requires --seed"));
            }
            let config = RunConfig::load_with_overrides(config.as_deref(), &pairs)?;
            let outcome = harness::train(&config, &out)?;
            if let Some(last) = outcome.history.epochs.last() {
                println!("final loss {:.6}", last.loss);
                if let Some(v) = last.validation {
                    print!("{}", v.to_key_value());
                }
            }
        }
        Command::Eval {
            checkpoint,
            data,
            input,
            out,
            strip_decoder,
        } => {
            let mut ckpt = Checkpoint::load(&checkpoint)?;
            if strip_decoder {
                ckpt.strip_decoder();
            }
            let input = input.unwrap_or_else(|| data.join(TEST_FILE));
            let samples = load_interactions(&input, ckpt.header.config.max_seq_len)?;
            let load = |m: Modality| {
                let (bin, ids) = dmae::datasets::synthetic::embedding_files(&data, m);
                load_modal_embeddings(m, bin, ids)
            };
            let tables = [load(Modality::Text)?, load(Modality::Image)?];
            let report = harness::evaluate(&ckpt, &samples, [&tables[0], &tables[1]])?;
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| DmaeError::Io {
                    path: dir.clone(),
                    source: e,
                })?;
                report.write(&dir)?;
            }
            print!("{}", report.to_key_value());
        }
        Command::Ablate {
            config,
            out,
            seeds,
            variants,
            overrides,
        } => {
            let config = run_config(config.as_deref(), &overrides)?;
            let variants = if variants.is_empty() {
                Ablation::ALL.to_vec()
            } else {
                variants.iter().map(|v| v.parse()).collect::<Result<_, _>>()?
            };
            let table = harness::run_ablation_suite(&config, &variants, &seeds, Some(&out))?;
            print!("{}", table.to_tsv());
        }
        Command::Sweep {
            config,
            axis,
            out,
            overrides,
        } => {
            let config = run_config(config.as_deref(), &overrides)?;
            let axis: SweepAxis = axis.parse()?;
            let table = harness::sweep(&config, axis, Some(&out))?;
            print!("{}", table.to_tsv());
        }
        Command::Gradcheck {
            config,
            all,
            overrides,
        } => {
            let pairs = parse_overrides(&overrides)?;
            let variants = if all {
                Ablation::ALL.to_vec()
            } else {
                vec![pairs
                    .iter()
                    .rev()
                    .find(|(k, _)| k == "ablation")
                    .map(|(_, v)| v.parse())
                    .transpose()?
                    .unwrap_or_default()]
            };
            let mut failures = Vec::new();
            for variant in variants {
                let mut config = match config.as_deref() {
                    Some(p) => RunConfig::load_with_overrides(Some(p), &pairs)?,
                    None => harness::micro_config(variant).with_overrides(&pairs)?,
                };
                config.ablation = variant;
                match harness::gradcheck(&config) {
                    Ok(report) => {
                        println!("[{variant}] max relative error {:.3e}", report.max_error());
                        print!("{}", report.to_text());
                    }
                    Err(DmaeError::GradientCheck(names)) => {
                        println!("[{variant}] FAILED: {}", names.join(", "));
                        failures.extend(names.into_iter().map(|n| format!("{variant}: {n}")));
                    }
                    Err(e) => return Err(e),
                }
            }
            if !failures.is_empty() {
                return Err(DmaeError::GradientCheck(failures));
            }
        }
        Command::Report { sweeps, out } => {
            let out = out.unwrap_or_else(|| sweeps.clone());
            let mut plotted = 0;
            let entries = std::fs::read_dir(&sweeps).map_err(|e| DmaeError::Io {
                path: sweeps.clone(),
                source: e,
            })?;
            let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
            paths.sort();
            for path in paths {
                let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
                if !(name.starts_with("sweep-") && name.ends_with(".json")) {
                    continue;
                }
                let table = SweepTable::read_json(&path)?;
                let svg = out.join(name.replace(".json", ".svg"));
                harness::plot_sweep(&table, &svg)?;
                info!("wrote {}", svg.display());
                println!("{}", svg.display());
                plotted += 1;
            }
            if plotted == 0 {
                return Err(usage(format!("no sweep-*.json files in {}", sweeps.display())));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}

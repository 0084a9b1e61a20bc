use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedmas::config::ExperimentConfig;
use fedmas::runner::{self, Grid};
use fedmas::Error;

/// Federated learning simulator with rescue-factor model aggregation.
#[derive(Parser, Debug)]
#[command(name = "fedmas", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one experiment and write its artifacts to `output_dir`.
    ///
    /// Usage: `run [CONFIG] [--key value]...`; defaults are used without a config file.
    Run {
        #[arg(
            trailing_var_arg = true,
            allow_hyphen_values = true,
            value_name = "[CONFIG] [--KEY VALUE]"
        )]
        args: Vec<String>,
    },
    /// Run the cross product of a grid of overrides.
    ///
    /// Usage: `sweep [CONFIG] --grid 'method=fedavg,fedmas;lambda_f=0,1,3' [--replicates N] [--key value]...`
    Sweep {
        #[arg(
            trailing_var_arg = true,
            allow_hyphen_values = true,
            value_name = "[CONFIG] [--KEY VALUE]"
        )]
        args: Vec<String>,
    },
    /// Print the default configuration.
    Defaults,
}

/// Splits an optional leading config path from `--key value` / `--key=value` pairs.
fn split_args(raw: &[String]) -> Result<(Option<PathBuf>, Vec<(String, String)>), Error> {
    let (config, rest) = match raw.first() {
        Some(first) if !first.starts_with("--") => (Some(PathBuf::from(first)), &raw[1..]),
        _ => (None, raw),
    };
    let mut pairs = Vec::new();
    let mut errors = Vec::new();
    let mut it = rest.iter();
    while let Some(flag) = it.next() {
        let Some(key) = flag.strip_prefix("--") else {
            errors.push(format!("expected `--key value`, got `{flag}`"));
            continue;
        };
        if let Some((k, v)) = key.split_once('=') {
            pairs.push((k.to_string(), v.to_string()));
            continue;
        }
        match it.next() {
            Some(v) => pairs.push((key.to_string(), v.clone())),
            None => errors.push(format!("override `{flag}` has no value")),
        }
    }
    if errors.is_empty() {
        Ok((config, pairs))
    } else {
        Err(Error::InvalidConfig(errors))
    }
}

/// Removes a sweep-only flag from the override list.
fn take_flag(pairs: &mut Vec<(String, String)>, name: &str) -> Option<String> {
    let pos = pairs.iter().position(|(k, _)| k == name)?;
    Some(pairs.remove(pos).1)
}

fn load_config(
    path: Option<&PathBuf>,
    overrides: &[(String, String)],
) -> Result<ExperimentConfig, Error> {
    let mut config = match path {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    // Fields that parsed are still range-checked so one report lists every problem.
    let mut errors = match config.apply_overrides(overrides) {
        Ok(()) => Vec::new(),
        Err(Error::InvalidConfig(list)) => list,
        Err(e) => return Err(e),
    };
    match config.validate() {
        Ok(()) => {}
        Err(Error::InvalidConfig(list)) => errors.extend(list),
        Err(e) => return Err(e),
    }
    if errors.is_empty() {
        Ok(config)
    } else {
        Err(Error::InvalidConfig(errors))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = runner::threads_from_env();
    let result = match cli.command {
        Command::Run { args } => split_args(&args)
            .and_then(|(config, overrides)| load_config(config.as_ref(), &overrides))
            .and_then(|cfg| {
                let outcome = runner::run(&cfg, threads)?;
                let m = &outcome.final_metrics.metrics;
                println!(
                    "{}: {} rounds, balanced_acc {:.4}, tail_acc {}, artifacts in {}",
                    cfg.method,
                    outcome.state.round,
                    m.balanced_acc,
                    m.group_acc
                        .tail
                        .map_or_else(|| "n/a".into(), |t| format!("{t:.4}")),
                    cfg.output_dir.display()
                );
                Ok(())
            }),
        Command::Sweep { args } => split_args(&args).and_then(|(config, mut overrides)| {
            let grid = take_flag(&mut overrides, "grid").unwrap_or_default();
            let replicates = match take_flag(&mut overrides, "replicates") {
                Some(r) => r.parse::<usize>().map_err(|_| {
                    Error::InvalidConfig(vec![format!("replicates: `{r}` is not a count")])
                })?,
                None => 1,
            };
            let cfg = load_config(config.as_ref(), &overrides)?;
            let grid = Grid::parse(&grid)?;
            let cells = runner::sweep(&cfg, &grid, replicates, threads)?;
            println!(
                "{} cells x {replicates} replicates, summary in {}",
                cells.len(),
                cfg.output_dir.join("summary.csv").display()
            );
            Ok(())
        }),
        Command::Defaults => {
            print!("{}", ExperimentConfig::default().to_kv_string());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

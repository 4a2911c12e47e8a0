use std::path::{Path, PathBuf};
use std::process::ExitCode;

use camero::data::TargetColumn;
use camero::experiment::{self, ExperimentConfig, Figure, RunOptions, INDEX_FILE};
use camero::{Error, Result};
use clap::{Parser, Subcommand};

/// Train weight-shared perturbed ensembles and summarize the results.
#[derive(Parser, Debug)]
#[command(name = "camero", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run every sweep point and seed of a config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config's output_dir, then to
        /// $CAMERO_OUT/<name>.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seeds to run instead of the config's, as `0,1,2` or `0..5`.
        #[arg(long)]
        seeds: Option<String>,
        /// Worker threads; 0 means one per core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[arg(long, env = "CAMERO_OUT", default_value = "runs", hide_env_values = true)]
        out_root: PathBuf,
    },
    /// Tabulate final dev metrics across one or more runs.
    Compare {
        /// `index.json` files or the directories holding them.
        #[arg(required = true)]
        indices: Vec<PathBuf>,
        /// Also write the table as CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Long-format plot data for one figure.
    Figdata {
        #[arg(long)]
        index: PathBuf,
        /// branch_similarity, diversity_vs_strength, variance_vs_strength, or alpha_sweep.
        #[arg(long)]
        figure: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict every row of a feature CSV with a saved checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Column to ignore, by index or header name.
        #[arg(long)]
        drop_column: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(vec![format!("--seeds: cannot parse {s:?}; use 0,1,2 or 0..5")]);
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        (a..b).collect()
    } else {
        s.split(',')
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

fn index_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(INDEX_FILE)
    } else {
        p.to_path_buf()
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => camero::io::write_atomic(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            seeds,
            jobs,
            out_root,
        } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(s) = seeds {
                cfg.seeds = parse_seeds(&s)?;
            }
            let base_dir = config.parent().unwrap_or(Path::new(".")).to_path_buf();
            let name = if cfg.name.is_empty() {
                config.file_stem().map_or("experiment".into(), |s| s.to_string_lossy().into_owned())
            } else {
                cfg.name.clone()
            };
            let out_dir = out
                .or_else(|| cfg.output_dir.as_ref().map(|d| base_dir.join(d)))
                .unwrap_or_else(|| out_root.join(name));
            let index = experiment::run_experiment(&cfg, &RunOptions { out_dir: out_dir.clone(), jobs, base_dir })?;
            let failed: Vec<_> = index.failures().collect();
            eprintln!(
                "{} runs, {} failed; index at {}",
                index.runs.len(),
                failed.len(),
                out_dir.join(INDEX_FILE).display()
            );
            if let Some(f) = failed.first() {
                return Err(Error::Numeric(format!(
                    "run {} failed: {}",
                    f.id,
                    f.error.as_deref().unwrap_or("unknown error")
                )));
            }
            Ok(())
        }
        Command::Compare { indices, out } => {
            let paths: Vec<PathBuf> = indices.iter().map(|p| index_path(p)).collect();
            let refs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
            let table = experiment::compare(&refs)?;
            print!("{}", table.to_text());
            if let Some(out) = out {
                camero::io::write_atomic(&out, table.to_csv()?.as_bytes())?;
            }
            Ok(())
        }
        Command::Figdata { index, figure, out } => {
            let figure: Figure = figure.parse()?;
            let csv = experiment::figdata(&index_path(&index), figure)?;
            emit(&csv, out.as_deref())
        }
        Command::Predict {
            checkpoint,
            input,
            drop_column,
            out,
        } => {
            let drop = drop_column.map(|c| match c.parse::<usize>() {
                Ok(i) => TargetColumn::Index(i),
                Err(_) => TargetColumn::Name(c),
            });
            let csv = experiment::predict_csv(&checkpoint, &input, drop.as_ref())?;
            emit(&csv, out.as_deref())
        }
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
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists_and_ranges() {
        assert_eq!(parse_seeds("0,1,2").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("3..6").unwrap(), vec![3, 4, 5]);
        assert!(parse_seeds("a").is_err());
        assert!(parse_seeds("4..4").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}

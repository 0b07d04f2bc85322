//! Command line driver: experiment configs in, datasets / curve files /
//! summaries out.
//!
//! Subcommands: sample, reconstruct, classical, hf, gradcheck, curves.
//! Flags: --config PATH, --out DIR, --seed N, --sweep PATH, --verbose.
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 non-convergence.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use potrec_cli::config::ExperimentConfig;
use potrec_cli::pipelines::{self, RunError};

struct Args {
    subcommand: String,
    config: Option<PathBuf>,
    out: PathBuf,
    seed: Option<u64>,
    sweep: Option<PathBuf>,
    verbose: bool,
}

const USAGE: &str = "usage: potrec <sample|reconstruct|classical|hf|gradcheck|curves> \
[--config PATH] [--out DIR] [--seed N] [--sweep PATH] [--verbose]";

fn parse_args() -> Result<Args, String> {
    let mut it = std::env::args().skip(1);
    let subcommand = it.next().ok_or(USAGE.to_string())?;
    let mut args = Args {
        subcommand,
        config: None,
        out: PathBuf::from("potrec_out"),
        seed: None,
        sweep: None,
        verbose: false,
    };
    while let Some(flag) = it.next() {
        match flag.as_str() {
            "--config" => {
                args.config = Some(PathBuf::from(
                    it.next().ok_or("--config needs a path")?,
                ))
            }
            "--out" => args.out = PathBuf::from(it.next().ok_or("--out needs a directory")?),
            "--seed" => {
                args.seed = Some(
                    it.next()
                        .ok_or("--seed needs a value")?
                        .parse()
                        .map_err(|_| "--seed needs an unsigned integer".to_string())?,
                )
            }
            "--sweep" => {
                args.sweep = Some(PathBuf::from(it.next().ok_or("--sweep needs a path")?))
            }
            "--verbose" => args.verbose = true,
            other => return Err(format!("unknown flag '{other}'\n{USAGE}")),
        }
    }
    Ok(args)
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, RunError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = seed {
        cfg.data.seed = seed;
    }
    Ok(cfg)
}

fn run_one(args: &Args, config_path: &Path, out_dir: &Path) -> Result<(), RunError> {
    let cfg = load_config(config_path, args.seed)?;
    match args.subcommand.as_str() {
        "sample" => pipelines::run_sample(&cfg, out_dir, args.verbose).map(|_| ()),
        "reconstruct" => pipelines::run_reconstruct(&cfg, out_dir, args.verbose).map(|_| ()),
        "classical" => pipelines::run_classical(&cfg, out_dir, args.verbose).map(|_| ()),
        "hf" => pipelines::run_hf(&cfg, out_dir, args.verbose).map(|_| ()),
        "curves" => pipelines::run_curves(&cfg, out_dir, args.verbose).map(|_| ()),
        other => Err(RunError {
            exit_code: 2,
            message: format!("unknown subcommand '{other}'\n{USAGE}"),
        }),
    }
}

fn main() -> ExitCode {
    let args = match parse_args() {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("{msg}");
            return ExitCode::from(2);
        }
    };

    if args.subcommand == "gradcheck" {
        let code = pipelines::run_gradcheck(args.seed.unwrap_or(7));
        return ExitCode::from(code as u8);
    }

    // Sweep mode: one config path per line, each run in its own thread with
    // an isolated output directory named after the config file.
    if let Some(sweep) = &args.sweep {
        let list = match std::fs::read_to_string(sweep) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("cannot read sweep file {}: {e}", sweep.display());
                return ExitCode::from(2);
            }
        };
        let configs: Vec<PathBuf> = list
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(PathBuf::from)
            .collect();
        let mut handles = Vec::new();
        for path in configs {
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".into());
            let out_dir = args.out.join(stem);
            let args_clone = Args {
                subcommand: args.subcommand.clone(),
                config: Some(path.clone()),
                out: out_dir.clone(),
                seed: args.seed,
                sweep: None,
                verbose: args.verbose,
            };
            handles.push(std::thread::spawn(move || {
                match run_one(&args_clone, &path, &out_dir) {
                    Ok(()) => 0,
                    Err(e) => {
                        eprintln!("{}: {}", path.display(), e.message);
                        e.exit_code
                    }
                }
            }));
        }
        let worst = handles
            .into_iter()
            .map(|h| h.join().unwrap_or(3))
            .max()
            .unwrap_or(0);
        return ExitCode::from(worst as u8);
    }

    let Some(config_path) = args.config.clone() else {
        eprintln!("--config is required\n{USAGE}");
        return ExitCode::from(2);
    };
    match run_one(&args, &config_path, &args.out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.message);
            ExitCode::from(e.exit_code as u8)
        }
    }
}

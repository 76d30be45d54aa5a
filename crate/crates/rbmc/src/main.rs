use std::path::PathBuf;
use std::process::ExitCode;

use rbmc::config::{parse_config, version_string};
use rbmc::experiments::{preset_text, run_experiment, PRESETS};
use rbmc::{Error, Result};

const USAGE: &str = "\
usage: rbmc run <config.ini> [--out DIR] [--seed S]
       rbmc run --preset NAME [--out DIR] [--seed S]
       rbmc presets
       rbmc --version

Runs the experiment described by an INI config and writes CSV outputs plus
a manifest.ini (the resolved config with a [result] section) into the
output directory. --out and --seed override the [experiment] values.

Exit codes: 0 success, 2 bad usage or config, 1 runtime failure.";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run_cli(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run_cli(args: &[String]) -> Result<()> {
    match args.first().map(String::as_str) {
        Some("run") => cmd_run(&args[1..]),
        Some("presets") => {
            for (name, _) in PRESETS {
                println!("{name}");
            }
            Ok(())
        }
        Some("--version" | "-V") => {
            println!("{}", version_string());
            Ok(())
        }
        Some(other) => Err(Error::config(
            "arguments",
            format!("unknown command `{other}`\n{USAGE}"),
        )),
        None => Err(Error::config("arguments", format!("missing command\n{USAGE}"))),
    }
}

fn cmd_run(args: &[String]) -> Result<()> {
    let mut config_path: Option<String> = None;
    let mut preset: Option<String> = None;
    let mut out: Option<String> = None;
    let mut seed: Option<u64> = None;
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let mut value_for = |flag: &str| -> Result<String> {
            it.next().cloned().ok_or_else(|| {
                Error::config("arguments", format!("{flag} expects a value"))
            })
        };
        match arg.as_str() {
            "--preset" => preset = Some(value_for("--preset")?),
            "--out" => out = Some(value_for("--out")?),
            "--seed" => {
                let raw = value_for("--seed")?;
                seed = Some(raw.parse().map_err(|_| {
                    Error::config("arguments", format!("--seed expects an integer, got `{raw}`"))
                })?);
            }
            other if other.starts_with('-') => {
                return Err(Error::config(
                    "arguments",
                    format!("unknown flag `{other}`\n{USAGE}"),
                ));
            }
            path => {
                if config_path.replace(path.to_string()).is_some() {
                    return Err(Error::config("arguments", "more than one config path given"));
                }
            }
        }
    }

    let text = match (&config_path, &preset) {
        (Some(_), Some(_)) => {
            return Err(Error::config(
                "arguments",
                "give either a config path or --preset, not both",
            ));
        }
        (None, None) => {
            return Err(Error::config(
                "arguments",
                format!("missing config path or --preset\n{USAGE}"),
            ));
        }
        (Some(path), None) => std::fs::read_to_string(path).map_err(|e| {
            Error::config("arguments", format!("cannot read config `{path}`: {e}"))
        })?,
        (None, Some(name)) => {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            preset_text(name)
                .ok_or_else(|| {
                    Error::config(
                        "arguments",
                        format!("unknown preset `{name}`; available: {}", names.join(", ")),
                    )
                })?
                .to_string()
        }
    };

    let mut cfg = parse_config(&text)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.out = o;
    }
    let out_dir = PathBuf::from(&cfg.out);
    run_experiment(&cfg, &out_dir)?;
    println!("{}: wrote {}", cfg.kind.as_str(), out_dir.display());
    Ok(())
}

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod args;
mod commands;
mod config;

use std::ffi::OsString;
use std::path::Path;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use serde::Serialize;

use args::{Cli, Command};
use commands::{ensure_dir, Failure, Outcome};

#[derive(Serialize)]
struct ErrorArtifact<'a> {
    category: &'a str,
    module: &'a str,
    message: &'a str,
}

fn report(failure: &Failure, out: &Path) {
    eprintln!("error [{}/{}]: {}", failure.module, failure.category, failure.message);
    let artifact = ErrorArtifact {
        category: &failure.category,
        module: failure.module,
        message: &failure.message,
    };
    let written = std::fs::create_dir_all(out)
        .map_err(anova_rkhs::Error::from)
        .and_then(|_| anova_rkhs::io::write_json(out.join("error.json"), &artifact));
    if let Err(e) = written {
        eprintln!("could not write {}: {e}", out.join("error.json").display());
    }
}

fn run(cli: &Cli) -> Outcome {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Failure::new("cli", "argument", "--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::new("cli", "argument", e.to_string()))?;
    }
    ensure_dir(&cli.out)?;
    match &cli.command {
        Command::Fit(a) => commands::run_fit(a, &cli.out),
        Command::Tune(a) => commands::run_tune(a, &cli.out),
        Command::Sobol(a) => commands::run_sobol(a, &cli.out),
        Command::Predict(a) => commands::run_predict(a, &cli.out),
        Command::Benchmark(a) => commands::run_benchmark_cmd(a, &cli.out),
        Command::Generate(a) => commands::run_generate(a, &cli.out),
    }
}

fn main() -> ExitCode {
    let raw: Vec<OsString> = std::env::args_os().collect();
    let fallback_out = config::out_dir(&raw).unwrap_or_else(|| ".".into());
    let argv = match config::merge(raw) {
        Ok(a) => a,
        Err(msg) => {
            report(&Failure::new("cli", "config", msg), Path::new(&fallback_out));
            return ExitCode::FAILURE;
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let message = e.render().to_string();
            let first = message.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            report(&Failure::new("cli", "usage", first), Path::new(&fallback_out));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            report(&f, &cli.out);
            ExitCode::FAILURE
        }
    }
}

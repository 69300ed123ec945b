use std::process::ExitCode;

use clap::{CommandFactory, Parser};

mod commands;
mod config;
mod manifest;

use commands::Cli;
#[cfg(test)]
use commands::Command;

const EXIT_VALIDATION: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_INTERNAL: u8 = 4;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<crownbench::Error>() {
            return if e.is_validation() { EXIT_VALIDATION } else { EXIT_IO };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_INTERNAL
}

/// The error chain joined by ": ", skipping causes already quoted by the
/// message before them.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !out.ends_with(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn subcommand_names() -> Vec<String> {
    Cli::command()
        .get_subcommands()
        .map(|c| c.get_name().to_string())
        .collect()
}

fn parse_args() -> Result<Cli, ExitCode> {
    let mut args: Vec<String> = std::env::args().collect();
    if let Some(path) = config::find_config(&args) {
        match config::config_args(std::path::Path::new(&path)) {
            Ok(extra) => {
                let names = subcommand_names();
                let names: Vec<&str> = names.iter().map(String::as_str).collect();
                args = config::splice(args, &names, extra);
            }
            Err(e) => {
                eprintln!("error: {}", describe(&e));
                return Err(ExitCode::from(exit_code(&e)));
            }
        }
    }
    Cli::try_parse_from(args).map_err(|e| {
        let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
        let _ = e.print();
        ExitCode::from(code)
    })
}

fn main() -> ExitCode {
    let cli = match parse_args() {
        Ok(c) => c,
        Err(code) => return code,
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.verbose {
        "debug"
    } else {
        "warn"
    }))
    .target(env_logger::Target::Stderr)
    .init();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(EXIT_INTERNAL);
        }
    }
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| commands::run(&cli)));
    match result {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(EXIT_INTERNAL),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_classes_map_to_exit_codes() {
        let v: anyhow::Error = crownbench::Error::Validation("x".into()).into();
        assert_eq!(exit_code(&v), 2);
        let c: anyhow::Error = crownbench::Error::CrsMismatch {
            left: "a".into(),
            left_source: "p".into(),
            right: "b".into(),
            right_source: "q".into(),
        }
        .into();
        assert_eq!(exit_code(&c.context("evaluating")), 2);
        let io: anyhow::Error = crownbench::Error::io("f", std::io::Error::other("gone")).into();
        assert_eq!(exit_code(&io), 3);
        assert_eq!(exit_code(&anyhow::anyhow!("bug")), 4);
    }

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
        assert!(matches!(
            Cli::try_parse_from(["crownbench", "plan", "--gsd", "0.045", "--tile-px", "3555", "--crop", "666:2666", "--resize", "1024:1777"]).unwrap().command,
            Command::Plan(_)
        ));
    }
}

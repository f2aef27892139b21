//! Deterministic stand-in for an SV-COMP verifier.
//!
//! Each non-comment line of the answers file is `<needle> <answer>`; the first
//! line whose needle occurs in the input file name (or is `*`) decides the
//! answer: `true`, `false`, `unknown`, `timeout` (sleeps), `garbage` or `crash`.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::Parser;

#[derive(Parser)]
#[command(name = "evmsafe-stub-verifier")]
struct Cli {
    #[arg(long)]
    answers: PathBuf,
    /// Property file; accepted and ignored.
    #[arg(long)]
    spec: Option<PathBuf>,
    input: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    let table = match std::fs::read_to_string(&cli.answers) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", cli.answers.display());
            return ExitCode::from(2);
        }
    };
    if !cli.input.is_file() {
        eprintln!("no such input {}", cli.input.display());
        return ExitCode::from(2);
    }
    let name = cli
        .input
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let answer = table
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|l| l.split_once(char::is_whitespace))
        .find(|(needle, _)| *needle == "*" || name.contains(needle))
        .map_or("unknown", |(_, a)| a.trim());
    match answer {
        "true" => println!("Verification result: TRUE"),
        "false" => println!("Verification result: FALSE. Property violation found"),
        "unknown" => println!("Verification result: UNKNOWN"),
        "timeout" => std::thread::sleep(Duration::from_secs(3600)),
        "crash" => {
            eprintln!("internal error");
            return ExitCode::from(134);
        }
        _ => println!("%% unparsable output %%"),
    }
    ExitCode::SUCCESS
}

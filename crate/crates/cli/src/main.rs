//! `topret` command-line interface.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 internal error.

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = args::Cli::parse();
    match commands::run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<commands::Internal>() => {
            eprintln!("internal error: {}", render(&e));
            ExitCode::from(4)
        }
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::from(3)
        }
    }
}

/// Joins the error chain, skipping causes already quoted by their parent.
fn render(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if out.ends_with(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
    }
    out
}

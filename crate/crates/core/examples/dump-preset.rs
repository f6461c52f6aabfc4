//! Prints a preset as TOML, as a starting point for a custom config.

use std::process::ExitCode;

fn main() -> ExitCode {
    let Some(name) = std::env::args().nth(1) else {
        eprintln!("usage: dump-preset <name>");
        return ExitCode::FAILURE;
    };
    match nvlab::experiment::preset(&name).and_then(|c| c.to_toml()) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

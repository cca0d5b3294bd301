use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use kcfg_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok((stdout, code)) => {
            let _ = std::io::stdout().write_all(stdout.as_bytes());
            ExitCode::from(code as u8)
        }
        Err(e) => {
            eprintln!("kcfg-rl: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::process::ExitCode;

use clap::Parser;
use rbeam::cli::{self, Cli};

fn main() -> ExitCode {
    let args = Cli::parse();
    match cli::run(&args.common, &args.command) {
        Ok(m) => {
            for f in &m.outputs {
                println!("{}", args.common.out.join(f).display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("rbeam: error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

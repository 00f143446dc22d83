use clap::Parser;

use dap_cli::app::{execute, Cli};
use dap_cli::{exit_code, EXIT_OK, EXIT_USAGE};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    if let Err(e) = execute(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(exit_code(&e));
    }
}

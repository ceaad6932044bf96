use clap::Parser;

use mgsim::cli::{init_logging, run, Cli};

fn main() {
    init_logging();
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("mgsim: {e}");
        std::process::exit(e.exit_code());
    }
}

use clap::Parser;
use drivelab_cli::{exit_code, run, Cli};

fn main() {
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    if let Err(e) = run(cli, argv) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

use clap::Parser;

use offersel::cli::{self, Cli};

fn main() {
    // Clap handles --help (exit 0) and usage errors (exit 2) itself.
    let cli = Cli::parse();
    if let Err(err) = cli::run(cli) {
        eprintln!("error: {err}");
        std::process::exit(cli::exit_code(&err));
    }
}

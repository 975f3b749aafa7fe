use clap::Parser;

use aline_core::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}

use clap::Parser;
use cstl::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}

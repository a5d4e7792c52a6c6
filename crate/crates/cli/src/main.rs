use clap::Parser;

fn main() {
    std::process::exit(nefem_cli::run(nefem_cli::Cli::parse()));
}

use clap::Parser;

fn main() {
    tokenprof::cli::init_logging();
    let cli = tokenprof::cli::Cli::parse();
    std::process::exit(tokenprof::cli::main_with(cli));
}

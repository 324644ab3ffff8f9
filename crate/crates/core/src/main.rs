use clap::Parser;

fn main() {
    let cli = lantk::cli::Cli::parse();
    std::process::exit(lantk::cli::main_with(cli));
}

use clap::Parser;

fn main() {
    let cli = oaae::cli::Cli::parse();
    std::process::exit(oaae::cli::run(cli));
}

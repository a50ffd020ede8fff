use clap::Parser;

fn main() {
    let cli = jumpflow::cli::Cli::parse();
    std::process::exit(jumpflow::cli::run(cli));
}

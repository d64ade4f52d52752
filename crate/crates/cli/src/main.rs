use clap::Parser;

fn main() {
    let cli = ddsf_cli::Cli::parse();
    std::process::exit(ddsf_cli::execute(&cli));
}

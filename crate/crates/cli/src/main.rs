use clap::Parser;

fn main() {
    let cli = fairmix_cli::args::Cli::parse();
    if let Err(failure) = fairmix_cli::run(cli) {
        eprintln!("error: {}", failure.message());
        std::process::exit(failure.exit_code());
    }
}

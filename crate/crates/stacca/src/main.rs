use clap::Parser;

fn main() {
    let cli = stacca::cli::Cli::parse();
    if let Err(e) = stacca::cli::execute(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

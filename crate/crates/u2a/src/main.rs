use clap::Parser;

fn main() {
    let cli = u2a::cli::Cli::parse();
    if let Err(e) = u2a::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

use clap::Parser;

fn main() {
    let cli = relrot::cli::Cli::parse();
    if let Err(e) = relrot::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

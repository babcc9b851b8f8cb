use clap::Parser;

fn main() {
    let cli = vireid_core::cli::Cli::parse();
    if let Err(e) = vireid_core::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

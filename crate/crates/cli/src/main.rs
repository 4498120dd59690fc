use clap::Parser;

fn main() {
    let cli = spinefuse_cli::cli::Cli::parse();
    if let Err(e) = spinefuse_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

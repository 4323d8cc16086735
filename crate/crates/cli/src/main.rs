use clap::Parser;

fn main() {
    let cli = protokg_cli::Cli::parse();
    if let Err(e) = protokg_cli::run(cli) {
        eprintln!("error [{}]: {e}", e.category());
        std::process::exit(e.exit_code());
    }
}

use clap::Parser;

fn main() {
    let cli = haustra_cli::Cli::parse();
    if let Err(e) = haustra_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

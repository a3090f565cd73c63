use clap::Parser;

fn main() {
    let cli = sof_lab::cli::Cli::parse();
    if let Err(e) = sof_lab::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

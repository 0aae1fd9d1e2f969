use clap::Parser;

fn main() {
    let cli = swinvid::cli::Cli::parse();
    if let Err(e) = swinvid::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

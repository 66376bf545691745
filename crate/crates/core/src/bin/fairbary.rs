use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = fairbary::cli::Cli::parse();
    if let Err(e) = fairbary::cli::run(cli) {
        eprintln!("fairbary: {e}");
        std::process::exit(e.exit_code());
    }
}

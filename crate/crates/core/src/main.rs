use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PHASH_LOG", "warn")).init();
    let cli = phash::cli::Cli::parse();
    if let Err(e) = phash::cli::run(cli) {
        eprintln!("phash: error: {e}");
        std::process::exit(1);
    }
}

use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = preddir_cli::Cli::parse();
    match preddir_cli::run(&cli) {
        Ok(()) => std::process::exit(preddir_cli::EXIT_OK),
        Err(e) => {
            eprintln!("error: {}", e.message);
            std::process::exit(e.code);
        }
    }
}

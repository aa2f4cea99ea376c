use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FLOWMOTION_LOG", "info")).init();
    let cli = flowmotion_cli::Cli::parse();
    if let Err(e) = flowmotion_cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(flowmotion_cli::exit_code(&e));
    }
}

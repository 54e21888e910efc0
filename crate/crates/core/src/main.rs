fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = eacnet::cli::configure_threads() {
        eprintln!("error: {e}");
        std::process::exit(eacnet::cli::EXIT_VALIDATION);
    }
    std::process::exit(eacnet::cli::run_from(std::env::args_os()));
}

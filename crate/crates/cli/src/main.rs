use tracing_subscriber::EnvFilter;

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let stdin = std::io::stdin();
    let code = saca_cli::run(std::env::args_os(), stdin.lock(), std::io::stdout(), std::io::stderr());
    std::process::exit(code);
}

use clap::Parser;
use telemafuse::cli::{render_error, run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("{}", render_error(&e));
        std::process::exit(e.exit_code());
    }
}

use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().collect();
    let cli = gaitdis_cli::Cli::parse_from(&args);
    if let Err(e) = gaitdis_cli::run(cli, &args) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

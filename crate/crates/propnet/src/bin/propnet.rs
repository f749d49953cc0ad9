use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = propnet::cli::Cli::parse();
    std::process::exit(propnet::cli::execute(&cli));
}

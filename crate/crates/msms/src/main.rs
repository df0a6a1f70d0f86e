use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = msms::cli::Cli::parse();
    if let Err(e) = msms::cli::run(cli) {
        let msg = e.to_string().replace('\n', " ");
        eprintln!("error[{}]: {msg}", e.category());
        std::process::exit(1);
    }
}

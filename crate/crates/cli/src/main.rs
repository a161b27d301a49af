use clap::Parser;
use vespo_lab::{init_threads, run, Cli, EXIT_CONFIG};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e:#}");
        std::process::exit(EXIT_CONFIG);
    }
    let code = match run(cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            f.code
        }
    };
    std::process::exit(code);
}

use clap::Parser;
use hedonic_cli::args::Cli;

fn main() {
    let cli = Cli::parse();
    match hedonic_cli::run(&cli) {
        Ok(text) => print!("{text}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

use clap::Parser;
use geomreg::cli::Cli;

fn main() {
    let cli = Cli::parse();
    if let Err(e) = geomreg::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

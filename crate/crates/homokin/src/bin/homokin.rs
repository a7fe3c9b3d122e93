use clap::Parser;
use homokin::harness::{execute, exit_code, Cli};

fn main() {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
        }
        Err(e) => {
            eprintln!("homokin: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}

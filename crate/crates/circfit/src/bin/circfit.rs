use std::process::exit;

fn main() {
    exit(circfit::cli::run_cli(std::env::args_os()));
}

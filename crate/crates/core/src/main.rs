use std::process::exit;

fn main() {
    env_logger::init();
    let args: Vec<String> = std::env::args().collect();
    exit(soco::cli::run_command(&args));
}

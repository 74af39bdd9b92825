fn main() {
    std::process::exit(activest_cli::run_command(std::env::args_os()));
}

fn main() {
    std::process::exit(cavsim::cli::run_cli(std::env::args_os()));
}

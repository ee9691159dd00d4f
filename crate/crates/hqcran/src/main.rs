fn main() {
    std::process::exit(hqcran::cli::run_cli(std::env::args_os()));
}

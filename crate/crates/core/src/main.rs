fn main() {
    std::process::exit(polarize::cli::run_cli(std::env::args_os()));
}

fn main() {
    std::process::exit(tdbarrier::cli::run_cli(std::env::args_os()));
}

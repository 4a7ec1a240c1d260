fn main() {
    std::process::exit(rwa_core::cli::run_from(std::env::args_os()));
}

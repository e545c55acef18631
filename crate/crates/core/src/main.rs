fn main() {
    std::process::exit(cvtrf::cli::run(std::env::args_os()));
}

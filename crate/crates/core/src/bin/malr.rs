fn main() {
    std::process::exit(malr_core::cli::run(std::env::args_os()));
}

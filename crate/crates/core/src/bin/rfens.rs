fn main() {
    std::process::exit(rfens_core::cli::run(std::env::args_os()));
}

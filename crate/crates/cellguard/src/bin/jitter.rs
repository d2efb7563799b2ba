fn main() {
    std::process::exit(cellguard::cli::jitter(std::env::args_os()));
}

fn main() {
    std::process::exit(cellguard::cli::simrun(std::env::args_os()));
}

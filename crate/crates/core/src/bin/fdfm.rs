fn main() {
    std::process::exit(fdfm::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(qdit::cli::run(std::env::args_os()));
}

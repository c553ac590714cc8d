fn main() {
    std::process::exit(relrank::cli::run(std::env::args_os()));
}

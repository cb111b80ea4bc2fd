fn main() {
    std::process::exit(inflare::cli::run(std::env::args_os()));
}

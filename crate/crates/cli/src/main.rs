fn main() {
    std::process::exit(cled_cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(hardball_cli::run(std::env::args_os()));
}

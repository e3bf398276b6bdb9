fn main() {
    std::process::exit(lomatch_cli::run(std::env::args_os()));
}

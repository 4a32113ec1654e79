fn main() {
    std::process::exit(hyfuse_cli::run(std::env::args_os()));
}

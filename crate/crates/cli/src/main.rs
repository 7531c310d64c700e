fn main() {
    std::process::exit(cloudatelier_cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(signforge_cli::run(std::env::args_os()));
}

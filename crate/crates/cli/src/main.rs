fn main() {
    std::process::exit(hyperhate_cli::run(std::env::args_os()));
}

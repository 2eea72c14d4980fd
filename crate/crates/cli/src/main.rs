fn main() {
    std::process::exit(disco_cli::cli::main_with_args(std::env::args_os()));
}

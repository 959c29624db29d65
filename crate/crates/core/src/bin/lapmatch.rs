fn main() {
    std::process::exit(lapmatch::cli::main_with_args(std::env::args_os()));
}

fn main() {
    std::process::exit(convsync::cli::main_with_args(std::env::args_os()));
}

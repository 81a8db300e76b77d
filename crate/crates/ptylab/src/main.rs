fn main() {
    std::process::exit(ptylab::cli::main_with_args(std::env::args_os()));
}

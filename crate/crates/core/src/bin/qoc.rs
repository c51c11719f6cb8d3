fn main() {
    std::process::exit(qoc::cli::main_with_args(std::env::args_os()));
}

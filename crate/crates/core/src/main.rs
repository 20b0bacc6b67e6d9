fn main() {
    std::process::exit(messi_core::cli::main_with_args(std::env::args_os()));
}

fn main() {
    std::process::exit(iqa_core::cli::main_with_args(std::env::args_os()));
}

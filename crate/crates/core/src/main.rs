fn main() {
    std::process::exit(hdt_core::cli::main_with_args(std::env::args_os()));
}

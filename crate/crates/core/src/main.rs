fn main() {
    std::process::exit(ntkstop::cli::main_with_args(std::env::args_os()));
}

fn main() {
    std::process::exit(clts::cli::main_with_args(std::env::args_os()));
}

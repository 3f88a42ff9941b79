fn main() {
    std::process::exit(bobax_cli::main_with_args(std::env::args_os()));
}

fn main() {
    std::process::exit(scriptorium::cli::main_with_args(std::env::args_os()));
}

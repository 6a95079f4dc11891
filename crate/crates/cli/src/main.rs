fn main() {
    std::process::exit(emcouple_cli::main_with(std::env::args_os()));
}

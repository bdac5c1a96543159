fn main() {
    std::process::exit(databias_cli::main_with_args(std::env::args_os()));
}

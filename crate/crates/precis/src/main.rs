fn main() {
    std::process::exit(precis::cli::main_with_args(std::env::args_os()));
}

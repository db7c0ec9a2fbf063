fn main() {
    std::process::exit(regmva::cli::main_with_args(std::env::args_os()));
}

fn main() {
    std::process::exit(llgail::cli::main_with_args(std::env::args_os()));
}

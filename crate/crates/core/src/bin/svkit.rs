fn main() {
    std::process::exit(svkit::cli::main_with_args(std::env::args_os()));
}

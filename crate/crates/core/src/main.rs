fn main() {
    std::process::exit(pathrisk::cli::main_with_args(std::env::args_os()));
}

fn main() {
    std::process::exit(fou2::cli::main_with_args(std::env::args_os()));
}

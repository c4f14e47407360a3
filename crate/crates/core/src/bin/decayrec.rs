fn main() {
    std::process::exit(decayrec::cli::main_with_args(std::env::args_os()));
}

fn main() {
    std::process::exit(kernagg::cli::main_with_args(std::env::args_os()));
}

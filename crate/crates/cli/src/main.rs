fn main() {
    std::process::exit(mopinn_cli::main_with_args(std::env::args_os()));
}

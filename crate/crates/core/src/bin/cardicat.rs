fn main() {
    std::process::exit(cardicat::cli::main_with_args(std::env::args_os()));
}

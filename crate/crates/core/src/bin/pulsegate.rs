fn main() {
    std::process::exit(pulsegate::cli::main_with(std::env::args_os()));
}

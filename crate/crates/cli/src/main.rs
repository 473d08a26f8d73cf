fn main() {
    std::process::exit(monou_cli::app::main_with(std::env::args_os()));
}

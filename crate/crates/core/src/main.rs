fn main() {
    std::process::exit(nbvp::cli::main_with(std::env::args_os()));
}

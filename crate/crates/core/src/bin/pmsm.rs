fn main() {
    std::process::exit(pmsm::cli::main_with_args(std::env::args_os()));
}

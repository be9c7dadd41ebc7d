fn main() {
    std::process::exit(ecsim::cli::main_with_args(std::env::args_os()));
}

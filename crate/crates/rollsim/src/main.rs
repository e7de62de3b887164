fn main() {
    env_logger::init();
    std::process::exit(rollsim::cli::main_with_args(std::env::args_os()));
}

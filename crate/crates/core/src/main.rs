fn main() {
    env_logger::init();
    std::process::exit(splatex::cli::run(std::env::args_os()));
}

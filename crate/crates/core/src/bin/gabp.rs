fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("GABP_LOG")).init();
    std::process::exit(gabp::cli::main_from(std::env::args_os()));
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MLA_LOG", "error")).init();
    std::process::exit(mla::cli::main_with(std::env::args_os()));
}

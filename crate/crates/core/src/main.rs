fn main() {
    std::process::exit(sprinkled_core::cli::run(std::env::args_os()));
}

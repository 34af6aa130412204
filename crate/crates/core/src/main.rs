fn main() {
    garden_core::cli::init_logging();
    std::process::exit(garden_core::cli::run(std::env::args_os()));
}

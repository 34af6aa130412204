//! `garden-install [git:REV] [--personal] [--push | --export]`

fn main() {
    garden_core::cli::init_logging();
    let args = ["garden-install".into(), "install".into()]
        .into_iter()
        .chain(std::env::args_os().skip(1));
    std::process::exit(garden_core::cli::run(args));
}

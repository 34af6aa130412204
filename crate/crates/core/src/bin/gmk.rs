//! `gmk [configure | make-args...]`: make with the cached build environment.

use std::ffi::OsString;

fn main() {
    garden_core::cli::init_logging();
    let mut rest: Vec<OsString> = std::env::args_os().skip(1).collect();
    let sub = if rest.first().is_some_and(|a| a == "configure") {
        rest.remove(0);
        "configure"
    } else {
        "make"
    };
    let args = ["gmk".into(), sub.into()].into_iter().chain(rest);
    std::process::exit(garden_core::cli::run(args));
}

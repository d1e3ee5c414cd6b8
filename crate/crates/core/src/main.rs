fn main() {
    std::process::exit(splat_avatar::cli::run(std::env::args_os()));
}

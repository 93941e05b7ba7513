fn main() {
    std::process::exit(castelo_core::cli::run(std::env::args_os()));
}

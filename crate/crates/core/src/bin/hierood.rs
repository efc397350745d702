fn main() {
    std::process::exit(hierood::cli::run(std::env::args_os()));
}

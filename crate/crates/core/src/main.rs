fn main() {
    std::process::exit(deepntl::cli::run(std::env::args_os()));
}

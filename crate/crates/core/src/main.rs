fn main() {
    std::process::exit(cacq::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(fjq::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(slpnet::cli::run(std::env::args_os()));
}

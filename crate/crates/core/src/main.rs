fn main() {
    std::process::exit(birank::cli::run(std::env::args_os()));
}

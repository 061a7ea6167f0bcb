fn main() {
    std::process::exit(hbgnn::cli::run(std::env::args_os()));
}

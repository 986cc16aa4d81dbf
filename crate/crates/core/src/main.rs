fn main() {
    std::process::exit(itera::cli::run(std::env::args_os()));
}

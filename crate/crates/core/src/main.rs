fn main() {
    std::process::exit(facebench::cli::run(std::env::args()));
}

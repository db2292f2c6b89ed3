fn main() {
    std::process::exit(cvp::cli::run(std::env::args().skip(1)));
}

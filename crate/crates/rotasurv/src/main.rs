fn main() {
    std::process::exit(rotasurv::cli::run());
}

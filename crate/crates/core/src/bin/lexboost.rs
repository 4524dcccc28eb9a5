fn main() {
    std::process::exit(lexboost::cli::run());
}

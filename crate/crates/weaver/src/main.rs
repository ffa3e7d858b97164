fn main() {
    std::process::exit(weaver::cli::run());
}

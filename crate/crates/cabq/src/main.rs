fn main() {
    std::process::exit(cabq::cli::main());
}

fn main() {
    std::process::exit(pacq::cli::main());
}

fn main() {
    std::process::exit(affdim::cli::main());
}

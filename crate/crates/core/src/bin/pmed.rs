fn main() {
    std::process::exit(pmed_core::cli::main());
}

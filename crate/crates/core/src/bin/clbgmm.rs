fn main() {
    std::process::exit(clbgmm::cli::main());
}

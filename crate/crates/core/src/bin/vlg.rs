fn main() {
    std::process::exit(vlg::cli::main());
}

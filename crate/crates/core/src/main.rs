fn main() {
    std::process::exit(torus_gmc::cli::main());
}

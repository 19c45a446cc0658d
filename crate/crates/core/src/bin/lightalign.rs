fn main() {
    std::process::exit(lightalign::cli::main());
}

fn main() {
    std::process::exit(pirbf::cli::main_entry());
}

fn main() {
    std::process::exit(zigzag_io::cli::main_entry());
}

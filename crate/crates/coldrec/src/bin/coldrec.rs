fn main() {
    std::process::exit(coldrec::cli::run());
}

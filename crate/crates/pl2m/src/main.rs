fn main() {
    std::process::exit(pl2m::cli::run());
}

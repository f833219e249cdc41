fn main() {
    std::process::exit(dfphys::cli::main_with_args(std::env::args().skip(1)));
}

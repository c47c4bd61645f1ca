fn main() {
    std::process::exit(archdoor::cli::run(std::env::args_os()));
}

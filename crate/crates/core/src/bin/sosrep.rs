fn main() {
    std::process::exit(sosrep::cli::run(std::env::args_os()));
}

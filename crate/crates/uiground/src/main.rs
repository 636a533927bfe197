fn main() {
    std::process::exit(uiground::cli::run(std::env::args_os()));
}

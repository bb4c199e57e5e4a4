fn main() {
    std::process::exit(rssloc::cli::run(std::env::args_os()));
}

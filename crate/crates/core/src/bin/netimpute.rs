fn main() {
    std::process::exit(netimpute::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(fedcausal::cli::run(std::env::args_os()));
}

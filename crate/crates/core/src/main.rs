fn main() {
    std::process::exit(gmvae::cli::run_from_args(std::env::args_os()));
}

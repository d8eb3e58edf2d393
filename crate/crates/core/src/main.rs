fn main() {
    std::process::exit(latent_invert::cli::run_command(std::env::args_os()));
}

fn main() {
    std::process::exit(spectrum_sim::cli::run_from(std::env::args_os()));
}

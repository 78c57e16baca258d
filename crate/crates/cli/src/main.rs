fn main() {
    std::process::exit(rlbf_cli::run_cli(std::env::args_os()));
}

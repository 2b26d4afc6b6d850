fn main() {
    std::process::exit(stm_didz_cli::run_from_args(std::env::args_os()));
}

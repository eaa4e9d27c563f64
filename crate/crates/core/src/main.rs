fn main() {
    std::process::exit(ptyinr::cli::run_cli(std::env::args_os()));
}

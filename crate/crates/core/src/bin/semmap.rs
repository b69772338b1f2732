fn main() {
    std::process::exit(semmap::cli::cli_dispatch(std::env::args_os()));
}

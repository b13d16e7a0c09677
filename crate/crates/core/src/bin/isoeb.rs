fn main() {
    std::process::exit(isoeb::cli::dispatch(std::env::args_os()));
}

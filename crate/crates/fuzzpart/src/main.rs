fn main() {
    std::process::exit(fuzzpart::cli::dispatch(std::env::args_os()));
}

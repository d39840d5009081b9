fn main() {
    std::process::exit(ssglab::cli::dispatch(std::env::args_os()));
}

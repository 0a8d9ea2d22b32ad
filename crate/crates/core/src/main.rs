fn main() {
    std::process::exit(sarjepa::cli::dispatch(std::env::args_os()));
}

fn main() {
    std::process::exit(slnmt::cli::dispatch(std::env::args_os()));
}

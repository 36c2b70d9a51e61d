fn main() {
    std::process::exit(slicegs::cli::run(std::env::args_os()));
}

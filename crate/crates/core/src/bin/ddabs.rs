fn main() {
    std::process::exit(ddabs::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(fnetlab::cli::run(std::env::args_os()));
}

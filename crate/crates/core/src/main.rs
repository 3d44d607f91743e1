fn main() {
    std::process::exit(epicon::cli::run(std::env::args_os()));
}

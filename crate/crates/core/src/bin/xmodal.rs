fn main() {
    std::process::exit(xmodal_core::cli::run(std::env::args_os()));
}

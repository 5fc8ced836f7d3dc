fn main() {
    std::process::exit(mxfar::cli::run(std::env::args_os()));
}

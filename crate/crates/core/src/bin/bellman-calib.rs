fn main() {
    std::process::exit(bellman_calib::cli::run(std::env::args_os()));
}

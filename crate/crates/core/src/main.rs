fn main() {
    std::process::exit(hdg_eig::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(delay_dtp::cli::run(std::env::args_os()));
}

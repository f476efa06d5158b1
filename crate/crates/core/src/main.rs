fn main() {
    std::process::exit(bak_sneppen::cli::run(std::env::args_os()));
}

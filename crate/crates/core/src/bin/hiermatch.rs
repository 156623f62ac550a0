fn main() {
    std::process::exit(hiermatch::cli::run(std::env::args_os()));
}

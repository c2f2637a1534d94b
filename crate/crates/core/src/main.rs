fn main() {
    std::process::exit(von::cli::run(std::env::args_os()));
}

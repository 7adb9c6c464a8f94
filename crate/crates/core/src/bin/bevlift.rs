fn main() {
    std::process::exit(bevlift::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(khmaladze::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(taskforge::cli::run());
}

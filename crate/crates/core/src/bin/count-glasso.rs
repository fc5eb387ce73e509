fn main() {
    std::process::exit(count_glasso::cli::run(std::env::args_os()));
}

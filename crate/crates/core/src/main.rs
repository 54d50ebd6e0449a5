fn main() {
    std::process::exit(ddiv::cli::run(std::env::args_os()));
}

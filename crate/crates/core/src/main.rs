fn main() {
    std::process::exit(inertia_lab::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(spherelab_cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(biascope_cli::run(std::env::args_os()));
}

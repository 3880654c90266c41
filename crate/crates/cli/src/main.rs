fn main() {
    std::process::exit(reefmap_cli::run(std::env::args_os()));
}

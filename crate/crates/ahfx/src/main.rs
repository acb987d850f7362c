fn main() {
    std::process::exit(ahfx::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(fusemtl::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(subscore_mtl::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(vdl::runner::cli::cli(std::env::args_os()));
}

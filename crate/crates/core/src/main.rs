fn main() {
    std::process::exit(panoptic4d::cli::main_with_args(std::env::args_os()));
}

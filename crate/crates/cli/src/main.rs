fn main() {
    std::process::exit(bvgrid_cli::main_with_args(std::env::args_os()));
}

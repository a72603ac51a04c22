fn main() {
    std::process::exit(hems_ddt::cli::main_with_args(std::env::args_os()));
}

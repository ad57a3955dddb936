fn main() {
    std::process::exit(crossdistill::cli::main_with_args(std::env::args_os()));
}

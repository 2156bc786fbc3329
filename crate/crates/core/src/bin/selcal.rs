fn main() {
    std::process::exit(selcal::cli::main_with_args(std::env::args_os()));
}

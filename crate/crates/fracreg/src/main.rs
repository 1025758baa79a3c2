fn main() {
    std::process::exit(fracreg::cli::main_with_args(std::env::args_os()));
}

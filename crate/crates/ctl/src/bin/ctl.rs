fn main() {
    std::process::exit(ctl::cli::main_from(std::env::args_os()));
}

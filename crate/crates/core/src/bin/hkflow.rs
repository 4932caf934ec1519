fn main() {
    std::process::exit(hkflow::runner::main_with_args(std::env::args_os()));
}

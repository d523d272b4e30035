fn main() {
    std::process::exit(mher::harness::main_with_args(std::env::args_os()));
}

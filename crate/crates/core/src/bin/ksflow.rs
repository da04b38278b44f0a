fn main() {
    std::process::exit(ksflow::harness::cli(std::env::args_os()));
}

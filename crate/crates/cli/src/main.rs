fn main() {
    std::process::exit(kvmem_cli::run(std::env::args_os()));
}

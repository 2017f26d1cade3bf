fn main() {
    std::process::exit(ens_cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(tdisc::cli::run_from(std::env::args_os()));
}

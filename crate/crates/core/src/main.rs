fn main() {
    std::process::exit(obscomp::harness::cli::run(std::env::args_os()));
}

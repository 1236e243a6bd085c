fn main() {
    std::process::exit(robust_rank_cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(portfolio_rl::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(repgraph::cli::run(std::env::args_os()));
}

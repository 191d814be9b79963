fn main() {
    std::process::exit(rag_importance::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(fedmdcg::cli::main_with_args(std::env::args_os()));
}

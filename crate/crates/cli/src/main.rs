fn main() {
    std::process::exit(dgl_cli::run_cli(std::env::args_os()));
}

fn main() {
    std::process::exit(tablemb_cli::run(std::env::args_os()))
}

fn main() {
    std::process::exit(illposed::cli::cli_main(std::env::args_os()));
}

fn main() {
    std::process::exit(meq::cli_main(std::env::args_os()));
}

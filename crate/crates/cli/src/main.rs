fn main() {
    std::process::exit(opmismatch_cli::run(std::env::args_os()));
}

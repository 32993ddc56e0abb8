fn main() {
    std::process::exit(deepmri_cli::execute(std::env::args_os()));
}

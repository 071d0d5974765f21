fn main() {
    std::process::exit(wkam_cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(fshbmap_cli::run(std::env::args_os()));
}

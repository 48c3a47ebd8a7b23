fn main() {
    std::process::exit(smallworld_contagion::cli::run(std::env::args_os()));
}

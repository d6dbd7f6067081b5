fn main() {
    std::process::exit(seedplan_cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(obstacle_ldp::cli::run(std::env::args_os()));
}

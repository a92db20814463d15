fn main() {
    std::process::exit(gpr_core::cli::run(std::env::args_os()));
}

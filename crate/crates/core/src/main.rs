fn main() {
    std::process::exit(madpde::cli::main_from_env());
}

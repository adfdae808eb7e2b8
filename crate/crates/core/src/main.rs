fn main() {
    let code = raydistill::cli::run(std::env::args_os());
    std::process::exit(code);
}

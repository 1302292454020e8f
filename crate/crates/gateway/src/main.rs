fn main() {
    let code = abase_gateway::cli::run(std::env::args_os(), Box::new(std::io::stdout()));
    std::process::exit(code);
}

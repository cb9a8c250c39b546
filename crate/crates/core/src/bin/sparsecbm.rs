use std::io;

fn main() {
    let stdin = io::stdin();
    let code = sparsecbm::cli::run_from(std::env::args_os(), &mut stdin.lock(), &mut io::stdout());
    std::process::exit(code);
}

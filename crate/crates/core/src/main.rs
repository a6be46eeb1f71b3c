fn main() {
    let code = local_style::cli::run(std::env::args_os(), |k| std::env::var(k).ok());
    std::process::exit(code);
}

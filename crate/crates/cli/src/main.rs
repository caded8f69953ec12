fn main() {
    std::process::exit(mp2m_cli::run(std::env::args_os()));
}

fn main() { std::process::exit(magcgo::cli::run_command(&std::env::args().collect::<Vec<_>>())); }

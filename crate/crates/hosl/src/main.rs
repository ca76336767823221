fn main() -> std::process::ExitCode {
    hosl::cli::run(std::env::args_os())
}

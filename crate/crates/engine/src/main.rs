fn main() -> std::process::ExitCode {
    octaloop_engine::cli::main()
}

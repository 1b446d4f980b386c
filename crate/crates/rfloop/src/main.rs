fn main() -> std::process::ExitCode {
    rfloop::cli::main()
}

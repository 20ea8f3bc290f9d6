fn main() -> std::process::ExitCode {
    stvc::cli::main()
}

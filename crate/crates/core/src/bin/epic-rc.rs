fn main() -> std::process::ExitCode {
    epic_rc::cli::main()
}

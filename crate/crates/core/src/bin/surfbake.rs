fn main() -> std::process::ExitCode {
    surfbake::cli::main()
}

fn main() -> std::process::ExitCode {
    sdoh::cli::main()
}

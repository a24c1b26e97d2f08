fn main() -> std::process::ExitCode {
    intformer::cli::main()
}

fn main() -> std::process::ExitCode {
    jeffreys_mala::cli::main()
}

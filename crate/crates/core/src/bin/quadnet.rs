fn main() -> std::process::ExitCode {
    quadnet::cli::main()
}

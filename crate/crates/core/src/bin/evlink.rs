fn main() -> std::process::ExitCode {
    evlink::cli::main()
}

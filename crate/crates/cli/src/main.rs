fn main() -> std::process::ExitCode {
    permlll_cli::main_entry()
}

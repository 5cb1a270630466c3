fn main() {
    if let Err(e) = ppf_lab_cli::run(std::env::args_os()) {
        eprintln!("ppf-lab: {e}");
        std::process::exit(e.exit_code());
    }
}

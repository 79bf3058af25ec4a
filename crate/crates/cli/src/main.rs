use std::io::Write;

fn main() {
    slotforge_cli::init_logging();
    let code = slotforge_cli::run(std::env::args(), &mut std::io::stdout().lock(), &mut std::io::stderr().lock());
    let _ = std::io::stdout().flush();
    std::process::exit(code);
}

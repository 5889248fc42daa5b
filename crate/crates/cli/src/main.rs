use clap::Parser;

fn main() {
    let cli = morphsim::Cli::parse();
    if let Err(e) = morphsim::run(cli) {
        let msg = serde_json::json!({
            "error": { "kind": e.kind(), "message": e.to_string() }
        });
        eprintln!("{msg}");
        std::process::exit(1);
    }
}

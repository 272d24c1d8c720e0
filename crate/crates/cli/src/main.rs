use std::process::ExitCode;

use clap::Parser;
use discom_cli::{execute, Cli};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let json = cli.json;
    let out = execute(cli);
    let body = if json {
        serde_json::to_string_pretty(&out.json).expect("json")
    } else {
        out.text
    };
    if out.code == 0 {
        println!("{body}");
    } else {
        eprintln!("{body}");
    }
    ExitCode::from(out.code as u8)
}

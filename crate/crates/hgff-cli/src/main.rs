//! `hgff` command-line front end.
//!
//! Exit status: 0 success, 2 configuration error, 3 numerical failure,
//! 4 inconclusive witness search.

mod commands;
mod config;
mod output;

use commands::{resolve, RunError};
use output::Sink;
use serde_json::{json, Value};
use std::io::Write;
use std::process::ExitCode;
use std::time::Instant;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_INCONCLUSIVE: u8 = 4;

fn error_class(e: &hgff::Error) -> &'static str {
    use hgff::Error::*;
    match e {
        Domain(_) => "domain",
        Dimension(_) => "dimension",
        Ellipticity(_) => "ellipticity",
        Divergence(_) => "divergence",
        Singularity(_) => "singularity",
        Solver { .. } => "solver",
        Quadrature { .. } => "quadrature",
        Degree { .. } => "degree",
        Fit(_) => "fit",
        Unsupported(_) => "unsupported",
        Inconclusive(_) => "inconclusive",
    }
}

fn threads(flag: Option<usize>) -> Result<usize, String> {
    if let Some(n) = flag {
        return Ok(n);
    }
    match std::env::var("HGFF_THREADS") {
        Ok(v) => v.trim().parse().map_err(|_| format!("HGFF_THREADS = '{v}' is not a thread count")),
        Err(_) => Ok(0),
    }
}

fn main() -> ExitCode {
    let cli = match config::parse(std::env::args_os().collect()) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    let name = cli.command.name();
    let config_error = |msg: String| {
        eprintln!("hgff {name}: configuration error: {msg}");
        let line = json!({ "record": 0, "kind": "error", "data": { "class": "config", "message": msg, "exit_code": EXIT_CONFIG } });
        let _ = std::io::stdout().write_all(format!("{line}\n").as_bytes());
        ExitCode::from(EXIT_CONFIG)
    };
    if let Err(e) = cli.command.validate() {
        return config_error(e.0);
    }
    let n_threads = match threads(cli.threads) {
        Ok(n) => n,
        Err(msg) => return config_error(msg),
    };
    let out: Box<dyn Write + Send> = match &cli.output {
        Some(p) => {
            let path = resolve(p);
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                let _ = std::fs::create_dir_all(dir);
            }
            match std::fs::File::create(&path) {
                Ok(f) => Box::new(f),
                Err(e) => return config_error(format!("cannot create {}: {e}", path.display())),
            }
        }
        None => Box::new(std::io::stdout()),
    };
    let start = Instant::now();
    let mut sink = match Sink::new(out, cli.format) {
        Ok(s) => s,
        Err(e) => return config_error(format!("cannot write output: {e}")),
    };
    let result = sink
        .record("run", output::header(name, &cli))
        .map_err(RunError::from)
        .and_then(|_| hgff::par::with_threads(n_threads, || commands::run(&cli.command, &mut sink)));

    let timing = cli.timing.then(|| start.elapsed().as_secs_f64());
    match result {
        Ok(()) => {
            let mut done = json!({ "records": sink.count() + 1 });
            if let Some(t) = timing {
                done["wall_clock_s"] = Value::from(t);
            }
            match sink.record("done", done) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("hgff {name}: {e}");
                    ExitCode::from(EXIT_NUMERIC)
                }
            }
        }
        Err(err) => {
            let (class, message, code) = match &err {
                RunError::Numeric(e @ hgff::Error::Inconclusive(_)) => (error_class(e), e.to_string(), EXIT_INCONCLUSIVE),
                RunError::Numeric(e) => (error_class(e), e.to_string(), EXIT_NUMERIC),
                RunError::Io(e) => ("io", e.to_string(), EXIT_NUMERIC),
            };
            eprintln!("hgff {name}: {message}");
            let mut data = json!({ "class": class, "message": message, "exit_code": code });
            if let Some(t) = timing {
                data["wall_clock_s"] = Value::from(t);
            }
            let _ = sink.record("error", data);
            ExitCode::from(code)
        }
    }
}

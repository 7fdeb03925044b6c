use std::io;
use std::process::ExitCode;

use roughpvar_cli::{run, WORKERS_ENV};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        match v.parse::<usize>() {
            Ok(k) if k > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
                    log::warn!("cannot size worker pool: {e}");
                }
            }
            _ => log::warn!("ignoring {WORKERS_ENV}={v}: expected a positive integer"),
        }
    }
    let code = run(std::env::args_os(), &mut io::stdout().lock(), &mut io::stderr().lock());
    ExitCode::from(code as u8)
}

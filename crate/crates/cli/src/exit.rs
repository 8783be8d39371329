//! Error classification into stable exit codes and the one-line stderr
//! format `error: kind=<kind> exit=<code> msg="<message>"`.

use vbreathnet::Error;

pub const OK: i32 = 0;
pub const OTHER: i32 = 1;
pub const USAGE: i32 = 2;
pub const IO: i32 = 3;
pub const PARSE: i32 = 4;
pub const SHAPE: i32 = 5;
pub const CHECKPOINT: i32 = 6;
pub const DOMAIN: i32 = 7;
pub const CONFIG: i32 = 8;

pub fn classify(err: &anyhow::Error) -> (&'static str, i32) {
    let Some(e) = err.chain().find_map(|c| c.downcast_ref::<Error>()) else {
        return ("other", OTHER);
    };
    match e {
        Error::Io { .. } | Error::Image { .. } => ("io", IO),
        Error::Parse { .. } => ("parse", PARSE),
        Error::Dimension(_) => ("shape", SHAPE),
        Error::Checkpoint(_) => ("checkpoint", CHECKPOINT),
        Error::Domain(_) => ("domain", DOMAIN),
        Error::Config(_) => ("config", CONFIG),
    }
}

pub fn error_line(kind: &str, code: i32, message: &str) -> String {
    let msg = message
        .replace('\\', "\\\\")
        .replace('"', "\\\"")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ");
    format!("error: kind={kind} exit={code} msg=\"{msg}\"")
}

//! Stderr logging gated by `LIVSURV_LOG` (error, warn, info, debug).

use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Level {
    Error,
    Warn,
    Info,
    Debug,
}

static LEVEL: OnceLock<Level> = OnceLock::new();

pub const ENV_VAR: &str = "LIVSURV_LOG";

fn parse(s: &str) -> Option<Level> {
    match s.trim().to_ascii_lowercase().as_str() {
        "error" | "quiet" => Some(Level::Error),
        "warn" => Some(Level::Warn),
        "info" | "" => Some(Level::Info),
        "debug" => Some(Level::Debug),
        _ => None,
    }
}

pub fn init() {
    let raw = std::env::var(ENV_VAR).unwrap_or_default();
    let level = parse(&raw).unwrap_or_else(|| {
        eprintln!("warn: {ENV_VAR}={raw:?} not recognized, using info");
        Level::Info
    });
    let _ = LEVEL.set(level);
}

pub fn enabled(level: Level) -> bool {
    level <= *LEVEL.get().unwrap_or(&Level::Info)
}

macro_rules! log_at {
    ($level:expr, $tag:literal, $($arg:tt)*) => {
        if $crate::log::enabled($level) {
            eprintln!(concat!($tag, ": {}"), format!($($arg)*));
        }
    };
}

macro_rules! warn {
    ($($arg:tt)*) => { log_at!($crate::log::Level::Warn, "warn", $($arg)*) };
}

macro_rules! info {
    ($($arg:tt)*) => { log_at!($crate::log::Level::Info, "info", $($arg)*) };
}

macro_rules! debug {
    ($($arg:tt)*) => { log_at!($crate::log::Level::Debug, "debug", $($arg)*) };
}

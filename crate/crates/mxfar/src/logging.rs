//! Minimal stderr logging gated by the `MXFAR_LOG` environment variable.
//!
//! Levels: `quiet` (or `off`), `warn`, `info` (default), `debug`.

use std::sync::OnceLock;

static LEVEL: OnceLock<u8> = OnceLock::new();

pub fn level() -> u8 {
    *LEVEL.get_or_init(|| {
        match std::env::var("MXFAR_LOG")
            .unwrap_or_default()
            .to_ascii_lowercase()
            .as_str()
        {
            "quiet" | "off" | "0" => 0,
            "warn" => 1,
            "debug" => 3,
            _ => 2,
        }
    })
}

macro_rules! mx_warn {
    ($($arg:tt)*) => {
        if $crate::logging::level() >= 1 {
            eprintln!("[mxfar warn] {}", format!($($arg)*));
        }
    };
}

macro_rules! mx_info {
    ($($arg:tt)*) => {
        if $crate::logging::level() >= 2 {
            eprintln!("[mxfar] {}", format!($($arg)*));
        }
    };
}

macro_rules! mx_debug {
    ($($arg:tt)*) => {
        if $crate::logging::level() >= 3 {
            eprintln!("[mxfar debug] {}", format!($($arg)*));
        }
    };
}

pub(crate) use {mx_debug, mx_info, mx_warn};

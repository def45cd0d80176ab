//! JSON-lines logger on stderr.

use log::{Level, LevelFilter, Log, Metadata, Record};
use serde_json::json;
use std::io::Write;

struct JsonLines {
    level: LevelFilter,
}

impl Log for JsonLines {
    fn enabled(&self, metadata: &Metadata) -> bool {
        metadata.level() <= self.level
    }

    fn log(&self, record: &Record) {
        if !self.enabled(record.metadata()) {
            return;
        }
        let line = json!({
            "level": record.level().as_str().to_ascii_lowercase(),
            "target": record.target(),
            "message": record.args().to_string(),
        });
        let mut err = std::io::stderr().lock();
        let _ = writeln!(err, "{line}");
    }

    fn flush(&self) {
        let _ = std::io::stderr().flush();
    }
}

pub fn init(level: LevelFilter) {
    if log::set_boxed_logger(Box::new(JsonLines { level })).is_ok() {
        log::set_max_level(level);
    }
}

/// Writes the terminal error line carrying a machine-readable code.
pub fn error_line(code: &str, message: &str) {
    let line = json!({
        "level": Level::Error.as_str().to_ascii_lowercase(),
        "code": code,
        "message": message,
    });
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}

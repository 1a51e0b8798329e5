//! Line-oriented output. Machine records are JSON objects with fields in the
//! order given, one per line.

use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Human,
    Machine,
}

pub struct Record(Vec<(&'static str, Value)>);

impl Record {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    pub fn field(mut self, key: &'static str, value: impl Into<Value>) -> Self {
        self.0.push((key, value.into()));
        self
    }

    pub fn to_line(&self) -> String {
        let body: Vec<String> = self
            .0
            .iter()
            .map(|(k, v)| format!("{}:{}", Value::from(*k), v))
            .collect();
        format!("{{{}}}", body.join(","))
    }
}

pub fn hex(v: u64) -> String {
    format!("{v:016x}")
}

/// `println!` that ends the process instead of panicking when stdout goes
/// away: a closed pipe exits 0, any other write failure exits 3.
macro_rules! outln {
    ($($arg:tt)*) => {{
        use std::io::Write;
        if let Err(e) = writeln!(std::io::stdout(), $($arg)*) {
            std::process::exit(if e.kind() == std::io::ErrorKind::BrokenPipe { 0 } else { 3 });
        }
    }};
}
pub(crate) use outln;

/// Marked timing line on stderr; never part of deterministic output.
pub fn timing(msg: &str) {
    eprintln!("[timing] {msg}");
}

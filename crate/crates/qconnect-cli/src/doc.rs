//! Result document assembly.
//!
//! Every invocation emits one structured JSON document: command echo, the
//! parameters that were actually used, the outputs, and the diagnostics
//! (tolerances, truncation orders) that produced them. Complex numbers are
//! serialized exclusively as [re, im] pairs and matrices as nested arrays of
//! those, so documents are byte-identical across runs up to the timestamp.

use std::time::{SystemTime, UNIX_EPOCH};

use qconnect::{C64, CMatrix};
use serde_json::{json, Value};

pub fn complex(c: C64) -> Value {
    json!([c.re, c.im])
}

pub fn matrix(m: &CMatrix) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| complex(m[(i, j)])).collect()))
            .collect(),
    )
}

pub fn document(command: &str, parameters: Value, outputs: Value, diagnostics: Value) -> Value {
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    json!({
        "command": command,
        "parameters": parameters,
        "outputs": outputs,
        "diagnostics": diagnostics,
        "timestamp": stamp,
    })
}

/// Print one line to stdout. A closed pipe (e.g. piping into head) ends the
/// process quietly instead of panicking.
pub fn print_line(line: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    if let Err(e) = writeln!(out, "{line}") {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        eprintln!("error: cannot write to stdout: {e}");
        std::process::exit(2);
    }
}

pub fn emit(doc: &Value, pretty: bool) {
    let rendered = if pretty {
        serde_json::to_string_pretty(doc)
    } else {
        serde_json::to_string(doc)
    };
    print_line(&rendered.expect("document serializes"));
}

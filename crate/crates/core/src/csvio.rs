//! Shared plumbing for the comma-separated exports.
//!
//! Every file may open with `# key: value` comment lines carrying run
//! parameters, followed by a header row and the data rows. Floats are written
//! with 17 significant digits so they read back bit-for-bit.

use std::fmt::Write as _;

/// 17 significant digits in scientific notation.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_preamble(out: &mut String, entries: &[(String, String)]) {
    for (k, v) in entries {
        let _ = writeln!(out, "# {k}: {v}");
    }
}

/// Splits leading `#` lines into key/value pairs and returns the remainder.
pub fn split_preamble(text: &str) -> (Vec<(String, String)>, &str) {
    let mut entries = Vec::new();
    let mut rest = text;
    while let Some(line_end) = rest.find('\n').map(|i| i + 1).or(Some(rest.len())) {
        let line = &rest[..line_end];
        let Some(comment) = line.trim_end().strip_prefix('#') else {
            break;
        };
        if let Some((k, v)) = comment.split_once(':') {
            entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        rest = &rest[line_end..];
        if rest.is_empty() {
            break;
        }
    }
    (entries, rest)
}

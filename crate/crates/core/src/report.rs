use std::fmt;

use serde::{Deserialize, Serialize};

/// Per-layer learnable parameter counts.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamReport {
    pub lines: Vec<(String, usize)>,
}

impl ParamReport {
    pub fn push(&mut self, layer: impl Into<String>, count: usize) {
        self.lines.push((layer.into(), count));
    }

    pub fn extend(&mut self, other: ParamReport) {
        self.lines.extend(other.lines);
    }

    pub fn get(&self, layer: &str) -> Option<usize> {
        self.lines.iter().find(|(l, _)| l == layer).map(|(_, c)| *c)
    }

    pub fn total(&self) -> usize {
        self.lines.iter().map(|(_, c)| c).sum()
    }
}

/// Formats counts with thousands separators, e.g. `57,472`.
pub fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

impl fmt::Display for ParamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (layer, count) in &self.lines {
            writeln!(f, "{layer:<24}{:>12}", thousands(*count))?;
        }
        write!(f, "{:<24}{:>12}", "total", thousands(self.total()))
    }
}

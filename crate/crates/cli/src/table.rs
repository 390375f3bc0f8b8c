//! Plain aligned tables for stdout. Numbers are printed with `{}` so they
//! read back equal to what the JSON and CSV outputs hold.

use std::fmt::Write;

pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        self.rows.push(cells);
    }

    pub fn render(&self) -> String {
        let n = self.header.len();
        let mut width = vec![0; n];
        for r in std::iter::once(&self.header).chain(&self.rows) {
            for (i, c) in r.iter().enumerate().take(n) {
                width[i] = width[i].max(c.chars().count());
            }
        }
        let mut out = String::new();
        for r in std::iter::once(&self.header).chain(&self.rows) {
            let mut line = String::new();
            for (i, c) in r.iter().enumerate().take(n) {
                if i + 1 == n {
                    line.push_str(c);
                } else {
                    let _ = write!(line, "{c:<w$}  ", w = width[i]);
                }
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
        out
    }
}

impl std::fmt::Display for Table {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.render())
    }
}

pub fn report(r: &edf_core::EvalReport) -> Table {
    let mut t = Table::new(&["type", "tp", "fp", "fn", "precision", "recall", "f1"]);
    for row in &r.per_type {
        t.row(vec![
            row.key.clone(),
            row.tp.to_string(),
            row.fp.to_string(),
            row.fn_.to_string(),
            row.precision.to_string(),
            row.recall.to_string(),
            row.f1.to_string(),
        ]);
    }
    t.row(vec![
        "all".into(),
        r.tp.to_string(),
        r.fp.to_string(),
        r.fn_.to_string(),
        r.precision.to_string(),
        r.recall.to_string(),
        r.f1.to_string(),
    ]);
    t
}

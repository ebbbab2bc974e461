use crate::decoding::GateStats;

use super::PerplexityReport;

/// One row of the language-model / gate analysis table.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisRow {
    pub label: String,
    pub perplexity: PerplexityReport,
    pub gates: GateStats,
}

/// Aligned table followed by `key=value` lines, one block per row.
pub fn analysis_report(rows: &[AnalysisRow]) -> String {
    let header = ["task", "perplexity", "avg_g", "std_g"];
    let cells: Vec<[String; 4]> = rows
        .iter()
        .map(|r| {
            [
                r.label.clone(),
                format!("{:.4}", r.perplexity.perplexity),
                format!("{:.4}", r.gates.mean),
                format!("{:.4}", r.gates.std),
            ]
        })
        .collect();
    let mut width = header.map(str::len);
    for row in &cells {
        for (w, c) in width.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let line = |row: [&str; 4]| -> String {
        let mut s = format!("{:<w$}", row[0], w = width[0]);
        for (c, w) in row[1..].iter().zip(&width[1..]) {
            s.push_str(&format!("  {c:>w$}", w = *w));
        }
        s.trim_end().to_string()
    };
    let mut out = line(header);
    out.push('\n');
    for row in &cells {
        out.push_str(&line([&row[0], &row[1], &row[2], &row[3]]));
        out.push('\n');
    }
    for r in rows {
        out.push_str(&format!(
            "{0}.perplexity={1}\n{0}.avg_g={2}\n{0}.std_g={3}\n{0}.tokens={4}\n",
            r.label, r.perplexity.perplexity, r.gates.mean, r.gates.std, r.gates.count
        ));
    }
    out
}

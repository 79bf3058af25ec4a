use std::collections::BTreeSet;

use super::EvaluationReport;

fn render(header: Vec<String>, rows: Vec<Vec<String>>) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| {
                let pad = w - c.chars().count();
                if i == 0 {
                    format!("{c}{}", " ".repeat(pad))
                } else {
                    format!("{}{c}", " ".repeat(pad))
                }
            })
            .collect();
        padded.join("  ").trim_end().to_string()
    };
    let mut out = line(&header);
    out.push('\n');
    out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    out.push('\n');
    for row in &rows {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

fn f(x: f64) -> String {
    format!("{x:.4}")
}

/// Per-slot counts and scores, then micro and macro rows.
pub fn render_report(report: &EvaluationReport) -> String {
    let header = ["slot", "tp", "fp", "fn", "precision", "recall", "f1"].map(String::from).to_vec();
    let mut rows: Vec<Vec<String>> = report
        .per_slot
        .iter()
        .map(|(slot, s)| {
            vec![
                slot.clone(),
                s.tp.to_string(),
                s.fp.to_string(),
                s.fn_.to_string(),
                f(s.precision),
                f(s.recall),
                f(s.f1),
            ]
        })
        .collect();
    let m = &report.micro;
    rows.push(vec![
        "micro".into(),
        m.tp.to_string(),
        m.fp.to_string(),
        m.fn_.to_string(),
        f(m.precision),
        f(m.recall),
        f(m.f1),
    ]);
    let a = &report.macro_avg;
    rows.push(vec!["macro".into(), String::new(), String::new(), String::new(), f(a.precision), f(a.recall), f(a.f1)]);
    render(header, rows)
}

/// One row per labelled report, one F1 column per slot, then micro and
/// macro F1.
pub fn render_matrix(rows: &[(String, EvaluationReport)]) -> String {
    let slots: BTreeSet<&String> = rows.iter().flat_map(|(_, r)| r.per_slot.keys()).collect();
    let mut header = vec!["method".to_string()];
    header.extend(slots.iter().map(|s| s.to_string()));
    header.push("micro-f1".into());
    header.push("macro-f1".into());
    let body = rows
        .iter()
        .map(|(label, r)| {
            let mut row = vec![label.clone()];
            row.extend(slots.iter().map(|s| r.per_slot.get(*s).map_or("-".to_string(), |x| f(x.f1))));
            row.push(f(r.micro.f1));
            row.push(f(r.macro_avg.f1));
            row
        })
        .collect();
    render(header, body)
}

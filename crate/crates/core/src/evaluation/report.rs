//! Text table and `key=value` rendering of task results.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::evaluation::perturb::PerturbKind;
use crate::evaluation::tasks::{Estimate, TaskResult};

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub task: PerturbKind,
    pub model: String,
    pub result: TaskResult,
}

fn cell(e: &Estimate) -> String {
    format!("{:.3} ± {:.3}", e.accuracy, e.ci)
}

/// Aligned table with one row per (task, model).
pub fn format_table(rows: &[ReportRow]) -> String {
    let header = ["Task", "Model", "Easy", "K-1", "K-5", "K-10", "Avg"];
    let mut cells: Vec<[String; 7]> = Vec::with_capacity(rows.len() + 1);
    cells.push(header.map(String::from));
    for r in rows {
        let x = &r.result;
        cells.push([
            String::from(r.task.as_str()),
            r.model.clone(),
            cell(&x.easy),
            cell(&x.k1),
            cell(&x.k5),
            cell(&x.k10),
            format!("{:.3} ± {:.3}", x.average, x.average_ci),
        ]);
    }
    let mut widths = [0usize; 7];
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    for row in &cells {
        let line: Vec<String> = row
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// One `key=value` record per row.
pub fn format_key_values(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    for r in rows {
        let x = &r.result;
        out.push_str(&format!("task={} model={} n={}", r.task.as_str(), r.model, x.easy.n));
        for (name, e) in [("easy", &x.easy), ("k1", &x.k1), ("k5", &x.k5), ("k10", &x.k10)] {
            out.push_str(&format!(" {name}={:.6} {name}_ci={:.6}", e.accuracy, e.ci));
        }
        out.push_str(&format!(" avg={:.6} avg_ci={:.6}\n", x.average, x.average_ci));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_columns_line_up() {
        let e = Estimate::from_hits(9, 10).unwrap();
        let row = |model: &str| ReportRow {
            task: PerturbKind::Mut1,
            model: String::from(model),
            result: TaskResult::new(e, e, e, e),
        };
        let rows = [row("tdvae"), row("transformer")];
        let t = format_table(&rows);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        let col = lines[0].find("Easy").unwrap();
        assert_eq!(lines[1].find("0.900").unwrap(), col);
        assert_eq!(lines[2].find("0.900").unwrap(), col);
        let kv = format_key_values(&rows);
        assert!(kv.starts_with("task=mut1 model=tdvae n=10 easy=0.900000 easy_ci="));
        assert_eq!(kv.lines().count(), 2);
    }
}

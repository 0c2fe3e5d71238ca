//! Plain-text rendering of result tables for stdout.

use cropseries_core::analysis::CoverCropTable;
use cropseries_core::metrics::EvalReport;

fn pad(s: &str, w: usize) -> String {
    format!("{s:<w$}")
}

fn pad_r(s: &str, w: usize) -> String {
    format!("{s:>w$}")
}

fn grid(headers: &[&str], rows: &[Vec<String>], right_from: usize) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    for (i, h) in headers.iter().enumerate() {
        if i > 0 {
            out.push_str("  ");
        }
        out.push_str(&if i >= right_from {
            pad_r(h, widths[i])
        } else {
            pad(h, widths[i])
        });
    }
    out.push('\n');
    for (i, w) in widths.iter().enumerate() {
        if i > 0 {
            out.push_str("  ");
        }
        out.push_str(&"-".repeat(*w));
    }
    out.push('\n');
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            out.push_str(&if i >= right_from {
                pad_r(cell, widths[i])
            } else {
                pad(cell, widths[i])
            });
        }
        out.push('\n');
    }
    out
}

/// Method-by-scenario AUC/F1 grid, aligned for a terminal.
pub fn render_report(report: &EvalReport) -> String {
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.method.name().to_string(),
                r.scenario.clone(),
                format!("{:.4}", r.auc),
                format!("{:.4}", r.f1),
            ]
        })
        .collect();
    grid(&["method", "scenario", "auc", "f1"], &rows, 2)
}

/// Per-class cover-crop areas with the grand total last.
pub fn render_cover_table(table: &CoverCropTable) -> String {
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .chain(core::iter::once(&table.total))
        .map(|r| {
            vec![
                r.class_name.clone(),
                format!("{:.1}", r.total_area),
                format!("{:.1}", r.cover_area),
                format!("{:.1}", r.evergreen_area),
                format!("{:.2}", r.cover_percent),
            ]
        })
        .collect();
    grid(
        &[
            "class",
            "total_area",
            "cover_area",
            "evergreen_area",
            "cover_percent",
        ],
        &rows,
        1,
    )
}

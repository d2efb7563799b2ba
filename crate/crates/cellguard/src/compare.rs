//! Side-by-side comparison of two jitter reports.

use std::fmt::Write as _;

use cellguard_core::JitterReport;

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub metric: &'static str,
    pub a: f64,
    pub b: f64,
    /// `a / b` for metrics where smaller is better; `None` when not meaningful.
    pub factor: Option<f64>,
}

impl CompareRow {
    /// Relative reduction from `a` to `b` in percent.
    pub fn reduction_pct(&self) -> Option<f64> {
        self.factor?;
        (self.a > 0.0).then(|| (self.a - self.b) / self.a * 100.0)
    }
}

fn ratio(a: f64, b: f64) -> Option<f64> {
    match (a, b) {
        (a, _) if a == 0.0 => None,
        (a, b) if b == 0.0 => Some(if a > 0.0 { f64::INFINITY } else { 0.0 }),
        (a, b) => Some(a / b),
    }
}

pub fn compare_rows(a: &JitterReport, b: &JitterReport) -> Vec<CompareRow> {
    let lower = |metric, a: f64, b: f64| CompareRow { metric, a, b, factor: ratio(a, b) };
    vec![
        CompareRow { metric: "nominal cycle (us)", a: a.nominal_cycle_us, b: b.nominal_cycle_us, factor: None },
        lower("sigma (us)", a.sigma_us, b.sigma_us),
        lower("p99 |jitter| (us)", a.p99_abs_us, b.p99_abs_us),
        lower("p99.9 |jitter| (us)", a.p999_abs_us, b.p999_abs_us),
        lower("max |jitter| (us)", a.max_abs_us, b.max_abs_us),
        lower(">50us excursions (%)", a.excursion_fraction * 100.0, b.excursion_fraction * 100.0),
        lower("missed cycles", a.missed_cycles as f64, b.missed_cycles as f64),
        CompareRow {
            metric: "within +/-10us (%)",
            a: a.within_pm10us_fraction * 100.0,
            b: b.within_pm10us_fraction * 100.0,
            factor: None,
        },
        CompareRow { metric: "cycles analyzed", a: a.cycles_analyzed as f64, b: b.cycles_analyzed as f64, factor: None },
    ]
}

fn num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

pub fn format_table(a_label: &str, b_label: &str, rows: &[CompareRow]) -> String {
    let cells: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            let factor = match r.factor {
                Some(f) if f.is_infinite() => "inf".to_string(),
                Some(f) => format!("{f:.2}x"),
                None => "-".to_string(),
            };
            let red = r.reduction_pct().map_or("-".to_string(), |p| format!("{p:.1}%"));
            [r.metric.to_string(), num(r.a), num(r.b), factor, red]
        })
        .collect();
    let header = ["metric".to_string(), a_label.to_string(), b_label.to_string(), "factor".into(), "reduction".into()];
    let mut widths = header.clone().map(|h| h.len());
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let mut line = |row: &[String; 5]| {
        let _ = write!(out, "{:<w$}", row[0], w = widths[0]);
        for (c, w) in row.iter().zip(widths).skip(1) {
            let _ = write!(out, "  {c:>w$}");
        }
        out.push('\n');
    };
    line(&header);
    line(&widths.map(|w| "-".repeat(w)));
    for row in &cells {
        line(row);
    }
    out
}

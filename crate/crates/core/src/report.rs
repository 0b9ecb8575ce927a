//! Renderings of a [`BenchReport`]: flat CSV, a blocked markdown table
//! (strategy blocks of features × samples/batch, mirroring the usual
//! presentation of such grids), and JSON with the raw per-epoch records.
//!
//! CSV and markdown share the same number formatters, so any value that
//! appears in both renderings is textually identical.

use crate::bench::{BenchReport, BenchRow};

/// Seconds, fixed at four decimals everywhere.
pub fn fmt_secs(v: f64) -> String {
    format!("{v:.4}")
}

/// Percent, fixed at two decimals everywhere.
pub fn fmt_pct(v: f64) -> String {
    format!("{v:.2}")
}

pub fn to_csv(report: &BenchReport) -> String {
    let mut out = String::new();
    out.push_str(
        "strategy,samples,features,batch_size,n_models,dtype,threads,epochs,warmup,\
         epochs_counted,mean_secs,std_secs,ratio_pct,per_epoch_secs\n",
    );
    for row in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},,{}\n",
            row.strategy,
            row.n_samples,
            row.n_features,
            row.batch_size,
            row.n_models,
            row.dtype,
            row.threads,
            row.epochs,
            row.warmup,
            row.epochs_counted,
            fmt_secs(row.mean_secs),
            fmt_secs(row.std_secs),
            row.per_epoch_secs
                .iter()
                .map(|&v| fmt_secs(v))
                .collect::<Vec<_>>()
                .join(";"),
        ));
    }
    for r in &report.ratios {
        out.push_str(&format!(
            "ratio,{},{},{},{},{},{},{},{},,,,{},\n",
            r.n_samples,
            r.n_features,
            r.batch_size,
            report.meta.n_models,
            report.meta.dtype,
            report.meta.threads,
            report.meta.epochs,
            report.meta.warmup,
            fmt_pct(r.ratio_pct),
        ));
    }
    out
}

/// Column key: one (samples, batch size) pair.
fn columns(report: &BenchReport) -> Vec<(usize, usize)> {
    let mut cols: Vec<(usize, usize)> = report
        .rows
        .iter()
        .map(|r| (r.n_samples, r.batch_size))
        .collect();
    cols.sort_unstable();
    cols.dedup();
    cols
}

fn feature_rows(report: &BenchReport) -> Vec<usize> {
    let mut rows: Vec<usize> = report.rows.iter().map(|r| r.n_features).collect();
    rows.sort_unstable();
    rows.dedup();
    rows
}

fn find_row<'a>(
    report: &'a BenchReport,
    strategy: &str,
    features: usize,
    col: (usize, usize),
) -> Option<&'a BenchRow> {
    report.rows.iter().find(|r| {
        r.strategy == strategy
            && r.n_features == features
            && (r.n_samples, r.batch_size) == col
    })
}

pub fn to_markdown(report: &BenchReport) -> String {
    let meta = &report.meta;
    let mut out = format!(
        "models: {} | dtype: {} | threads: {} | epochs: {} (warm-up {}) | loss: {} | seed: {}\n",
        meta.n_models, meta.dtype, meta.threads, meta.epochs, meta.warmup, meta.loss, meta.seed
    );
    let cols = columns(report);
    let feats = feature_rows(report);
    let header = {
        let mut h = String::from("| Features |");
        for &(s, b) in &cols {
            h.push_str(&format!(" {s} / {b} |"));
        }
        h.push('\n');
        h.push_str("|---|");
        h.push_str(&"---|".repeat(cols.len()));
        h.push('\n');
        h
    };

    for strategy in ["parallel", "sequential"] {
        if !report.rows.iter().any(|r| r.strategy == strategy) {
            continue;
        }
        let title = match strategy {
            "parallel" => "Parallel (seconds)",
            _ => "Sequential (seconds)",
        };
        out.push_str(&format!("\n#### {title}\n\n{header}"));
        for &f in &feats {
            out.push_str(&format!("| {f} |"));
            for &col in &cols {
                match find_row(report, strategy, f, col) {
                    Some(row) => out.push_str(&format!(" {} |", fmt_secs(row.mean_secs))),
                    None => out.push_str(" - |"),
                }
            }
            out.push('\n');
        }
    }

    if !report.ratios.is_empty() {
        out.push_str(&format!("\n#### Parallel/Sequential (%)\n\n{header}"));
        for &f in &feats {
            out.push_str(&format!("| {f} |"));
            for &(s, b) in &cols {
                let cell = report
                    .ratios
                    .iter()
                    .find(|r| r.n_features == f && (r.n_samples, r.batch_size) == (s, b));
                match cell {
                    // A ratio above 100% means the fused run was slower;
                    // that is a configuration smell worth flagging.
                    Some(r) if r.ratio_pct > 100.0 => {
                        out.push_str(&format!(" {} (!) |", fmt_pct(r.ratio_pct)))
                    }
                    Some(r) => out.push_str(&format!(" {} |", fmt_pct(r.ratio_pct))),
                    None => out.push_str(" - |"),
                }
            }
            out.push('\n');
        }
    }
    out
}

pub fn to_json(report: &BenchReport) -> String {
    serde_json::to_string_pretty(report).expect("report serialization cannot fail")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{BenchMeta, RatioRow};
    use crate::scalar::DType;

    fn fake_row(strategy: &'static str, mean: f64) -> BenchRow {
        BenchRow {
            strategy,
            n_samples: 100,
            n_features: 5,
            batch_size: 32,
            n_models: 6,
            dtype: DType::F32,
            threads: 2,
            epochs: 4,
            warmup: 1,
            epochs_counted: 3,
            mean_secs: mean,
            std_secs: 0.001,
            per_epoch_secs: vec![mean + 0.01, mean, mean, mean],
        }
    }

    fn fake_report() -> BenchReport {
        BenchReport {
            meta: BenchMeta {
                n_models: 6,
                dtype: DType::F32,
                threads: 2,
                epochs: 4,
                warmup: 1,
                loss: "mse".into(),
                seed: 42,
                biases: false,
            },
            rows: vec![fake_row("parallel", 0.1234567), fake_row("sequential", 0.4)],
            ratios: vec![RatioRow {
                n_samples: 100,
                n_features: 5,
                batch_size: 32,
                ratio_pct: 30.864175,
            }],
        }
    }

    #[test]
    fn csv_and_markdown_share_numeric_values() {
        let report = fake_report();
        let csv = to_csv(&report);
        let md = to_markdown(&report);
        for row in &report.rows {
            let mean = fmt_secs(row.mean_secs);
            assert!(csv.contains(&mean), "csv missing {mean}");
            assert!(md.contains(&mean), "md missing {mean}");
        }
        let pct = fmt_pct(report.ratios[0].ratio_pct);
        assert!(csv.contains(&pct));
        assert!(md.contains(&pct));
    }

    #[test]
    fn csv_is_deterministic_apart_from_timing_columns() {
        let a = to_csv(&fake_report());
        let mut altered = fake_report();
        for row in &mut altered.rows {
            row.mean_secs += 0.5;
            row.std_secs += 0.5;
            for v in &mut row.per_epoch_secs {
                *v += 0.5;
            }
        }
        altered.ratios[0].ratio_pct += 1.0;
        let b = to_csv(&altered);

        let strip = |text: &str| -> Vec<Vec<String>> {
            text.lines()
                .skip(1)
                .map(|line| {
                    line.split(',')
                        .take(10) // everything before the timing columns
                        .map(str::to_owned)
                        .collect()
                })
                .collect()
        };
        assert_eq!(strip(&a), strip(&b));
        assert_ne!(a, b);
    }

    #[test]
    fn slow_parallel_cells_are_flagged() {
        let mut report = fake_report();
        report.ratios[0].ratio_pct = 140.0;
        let md = to_markdown(&report);
        assert!(md.contains("140.00 (!)"));
    }

    #[test]
    fn json_round_trips_per_epoch_records() {
        let report = fake_report();
        let json = to_json(&report);
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(value["rows"][0]["per_epoch_secs"].as_array().unwrap().len(), 4);
        assert_eq!(value["meta"]["threads"], 2);
    }
}

//! Render run records as result tables and CPU-vs-accelerator comparisons.

use crate::bench::{format_duration, speedup, RunKey, RunRecord};
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// The fixed table row order.
pub const ROW_ORDER: [&str; 8] = [
    "VGG16",
    "Resnet50",
    "Densenet",
    "Inceptionv3",
    "Xception",
    "Mobilenet",
    "XGBOOST-VGG16",
    "Proposed Model",
];

/// The fixed column headers, in order and capitalization.
pub const COLUMNS: [&str; 6] = [
    "Models",
    "Accuracy",
    "precision",
    "Recall",
    "F1 Score",
    "Execution Time",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Csv,
    Json,
}

impl TableFormat {
    pub fn parse(s: &str) -> Option<TableFormat> {
        match s {
            "markdown" | "md" => Some(TableFormat::Markdown),
            "csv" => Some(TableFormat::Csv),
            "json" => Some(TableFormat::Json),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TableSpec {
    pub run_key: RunKey,
    pub format: TableFormat,
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("mixed run keys: expected {expected}, found {found}")]
    MixedRunKeys { expected: String, found: String },
    #[error("duplicate records for model {0} under one run key; select one explicitly")]
    DuplicateModel(String),
    #[error("no comparable (model, device, device') pairs in the records")]
    NoComparablePairs,
    #[error("duration formatting failed: {0}")]
    Duration(String),
}

fn caption(key: &RunKey) -> String {
    format!(
        "{} GPU support for {} ({})",
        if key.accelerator_enabled { "With" } else { "Without" },
        format_args!("Device{}", key.device_index),
        key
    )
}

#[derive(Serialize)]
struct JsonRow<'a> {
    model: &'a str,
    accuracy: f64,
    precision: f64,
    recall: f64,
    f1: f64,
    execution_time: String,
    wall_seconds: f64,
    full_precision: FullMetrics,
}

#[derive(Serialize)]
struct FullMetrics {
    accuracy: f64,
    precision: f64,
    recall: f64,
    f1: f64,
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// One row per model in the fixed order; metrics at 2 decimals; times in the
/// canonical duration style; models without a record render as em dashes.
pub fn render_table(records: &[RunRecord], spec: &TableSpec) -> Result<String, ReportError> {
    let mut by_model: BTreeMap<&str, &RunRecord> = BTreeMap::new();
    for r in records {
        if r.run_key != spec.run_key {
            return Err(ReportError::MixedRunKeys {
                expected: spec.run_key.to_string(),
                found: r.run_key.to_string(),
            });
        }
        if by_model.insert(r.model_name.as_str(), r).is_some() {
            return Err(ReportError::DuplicateModel(r.model_name.clone()));
        }
    }

    let cells = |r: &RunRecord| -> Result<[String; 5], ReportError> {
        let time = format_duration(r.timing.wall_seconds)
            .map_err(|e| ReportError::Duration(e.to_string()))?;
        Ok([
            format!("{:.2}", r.metrics.accuracy),
            format!("{:.2}", r.metrics.precision),
            format!("{:.2}", r.metrics.recall),
            format!("{:.2}", r.metrics.f1),
            time,
        ])
    };

    match spec.format {
        TableFormat::Json => {
            let mut rows = Vec::new();
            for model in ROW_ORDER {
                if let Some(r) = by_model.get(model) {
                    let time = format_duration(r.timing.wall_seconds)
                        .map_err(|e| ReportError::Duration(e.to_string()))?;
                    rows.push(JsonRow {
                        model,
                        accuracy: round2(r.metrics.accuracy),
                        precision: round2(r.metrics.precision),
                        recall: round2(r.metrics.recall),
                        f1: round2(r.metrics.f1),
                        execution_time: time,
                        wall_seconds: r.timing.wall_seconds,
                        full_precision: FullMetrics {
                            accuracy: r.metrics.accuracy,
                            precision: r.metrics.precision,
                            recall: r.metrics.recall,
                            f1: r.metrics.f1,
                        },
                    });
                }
            }
            let body = serde_json::json!({
                "caption": caption(&spec.run_key),
                "columns": COLUMNS,
                "rows": rows,
            });
            Ok(serde_json::to_string_pretty(&body).expect("report serializes"))
        }
        TableFormat::Markdown => {
            let mut out = String::new();
            let _ = writeln!(out, "{}", caption(&spec.run_key));
            let _ = writeln!(out);
            let _ = writeln!(out, "| {} |", COLUMNS.join(" | "));
            let _ = writeln!(out, "|{}", "---|".repeat(COLUMNS.len()));
            if !records.is_empty() {
                for model in ROW_ORDER {
                    let row = match by_model.get(model) {
                        Some(r) => cells(r)?,
                        None => std::array::from_fn(|_| "\u{2014}".to_string()),
                    };
                    let _ = writeln!(out, "| {} | {} |", model, row.join(" | "));
                }
            }
            Ok(out)
        }
        TableFormat::Csv => {
            let mut out = String::new();
            let _ = writeln!(out, "# {}", caption(&spec.run_key));
            let _ = writeln!(out, "{}", COLUMNS.join(","));
            if !records.is_empty() {
                for model in ROW_ORDER {
                    let row = match by_model.get(model) {
                        Some(r) => cells(r)?,
                        None => std::array::from_fn(|_| "\u{2014}".to_string()),
                    };
                    let _ = writeln!(out, "{},{}", model, row.join(","));
                }
            }
            Ok(out)
        }
    }
}

/// For each model on each device with both an accelerated and an
/// unaccelerated record: the time saved, the speedup ratio, and the accuracy
/// delta. Models present under only one key list as "unpaired".
pub fn render_comparison(records: &[RunRecord]) -> Result<String, ReportError> {
    // (model, device) -> (cpu record, accelerated record)
    let mut groups: BTreeMap<(String, u32), (Option<&RunRecord>, Option<&RunRecord>)> = BTreeMap::new();
    for r in records {
        let slot = groups
            .entry((r.model_name.clone(), r.run_key.device_index))
            .or_insert((None, None));
        if r.run_key.accelerator_enabled {
            slot.1 = Some(r);
        } else {
            slot.0 = Some(r);
        }
    }

    let mut out = String::new();
    let _ = writeln!(out, "Accelerator comparison (D_i' vs D_i)");
    let _ = writeln!(out);
    let mut pairs = 0usize;
    let mut faster = 0usize;
    let mut unpaired: Vec<String> = Vec::new();
    for ((model, device), slot) in &groups {
        match slot {
            (Some(cpu), Some(acc)) => {
                pairs += 1;
                let ratio = speedup(&cpu.timing, &acc.timing)
                    .map_err(|e| ReportError::Duration(e.to_string()))?;
                // The time delta is taken at whole-minute precision (the
                // precision of the rendered hour-scale durations), so the
                // reported saving agrees with the displayed table times.
                let delta_minutes = (cpu.timing.wall_seconds / 60.0).floor()
                    - (acc.timing.wall_seconds / 60.0).floor();
                let delta_secs = cpu.timing.wall_seconds - acc.timing.wall_seconds;
                let delta = format_duration(delta_minutes.abs() * 60.0)
                    .map_err(|e| ReportError::Duration(e.to_string()))?;
                if ratio > 1.0 {
                    faster += 1;
                }
                let direction = if delta_secs >= 0.0 { "less" } else { "more" };
                let _ = writeln!(
                    out,
                    "{model} on Device{device}: \u{0394} = {delta} {direction}, {ratio:.2}\u{00d7}, \u{0394}accuracy = {:+.2}",
                    acc.metrics.accuracy - cpu.metrics.accuracy
                );
            }
            (Some(only), None) | (None, Some(only)) => {
                unpaired.push(format!("{model} ({})", only.run_key));
            }
            (None, None) => unreachable!("group created with a record"),
        }
    }
    if pairs == 0 {
        if !unpaired.is_empty() {
            let _ = writeln!(out, "unpaired: {}", unpaired.join(", "));
        }
        return Err(ReportError::NoComparablePairs);
    }
    if !unpaired.is_empty() {
        let _ = writeln!(out, "unpaired: {}", unpaired.join(", "));
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "{faster} of {pairs} paired models ran faster with the accelerator.");
    Ok(out)
}

/// Render the "unpaired" listing for record sets with no comparable pairs —
/// used by the CLI so the exit-4 path still shows what exists.
pub fn unpaired_listing(records: &[RunRecord]) -> String {
    let mut out = String::from("No comparable (model, device) pairs. Records present:\n");
    for r in records {
        let _ = writeln!(out, "  {} under {}", r.model_name, r.run_key);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{DeviceProfile, TimingRecord};
    use crate::metrics::MetricsReport;
    use chrono::Utc;
    use std::collections::BTreeSet;

    fn record(model: &str, key: RunKey, wall: f64, accuracy: f64) -> RunRecord {
        let now = Utc::now();
        RunRecord {
            run_id: format!("{model}-{key}"),
            model_name: model.into(),
            run_key: key,
            device: DeviceProfile {
                device_label: format!("Device{}", key.device_index),
                cpu_model: "test-cpu".into(),
                ram_gb: 16.0,
                gpu_model: None,
                accelerator_enabled: key.accelerator_enabled,
            },
            metrics: MetricsReport {
                accuracy,
                precision: 0.90,
                recall: 0.91,
                f1: 0.92,
                zero_division_flags: BTreeSet::new(),
            },
            timing: TimingRecord {
                wall_seconds: wall,
                clock_source: "monotonic".into(),
                started_at: now,
                ended_at: now,
            },
            config_hash: "cafe".into(),
            created_at: now,
            status: "ok".into(),
        }
    }

    const D1: RunKey = RunKey { device_index: 1, accelerator_enabled: true };
    const D1P: RunKey = RunKey { device_index: 1, accelerator_enabled: false };

    #[test]
    fn markdown_row_matches_reference_cells() {
        let records = vec![record("VGG16", D1P, 19620.0, 0.87)];
        let spec = TableSpec { run_key: D1P, format: TableFormat::Markdown };
        let text = render_table(&records, &spec).unwrap();
        assert!(text.contains("Without GPU support for Device1"));
        assert!(text.contains("| VGG16 | 0.87 | 0.90 | 0.91 | 0.92 | 5h 27min |"), "{text}");
        // missing models become em dashes, in fixed order
        let vgg_pos = text.find("| VGG16 |").unwrap();
        let resnet_pos = text.find("| Resnet50 |").unwrap();
        assert!(vgg_pos < resnet_pos);
        assert!(text.contains("| Resnet50 | \u{2014} |"));
    }

    #[test]
    fn zero_records_render_header_and_caption_only() {
        let spec = TableSpec { run_key: D1, format: TableFormat::Markdown };
        let text = render_table(&[], &spec).unwrap();
        assert!(text.contains("With GPU support for Device1"));
        assert!(text.contains("| Models |"));
        assert!(!text.contains("VGG16"));
    }

    #[test]
    fn csv_and_markdown_agree_cell_for_cell() {
        let records = vec![
            record("VGG16", D1P, 19620.0, 0.87),
            record("Mobilenet", D1P, 1469.0, 0.89),
        ];
        let md = render_table(&records, &TableSpec { run_key: D1P, format: TableFormat::Markdown }).unwrap();
        let csv = render_table(&records, &TableSpec { run_key: D1P, format: TableFormat::Csv }).unwrap();
        for line in csv.lines().skip(2) {
            let cells: Vec<&str> = line.split(',').collect();
            assert_eq!(cells.len(), 6);
            let md_row = format!("| {} |", cells.join(" | "));
            assert!(md.contains(&md_row), "markdown missing {md_row}");
        }
    }

    #[test]
    fn json_preserves_full_precision() {
        let mut r = record("VGG16", D1P, 19620.0, 0.87);
        r.metrics.accuracy = 0.8712345;
        let json = render_table(&[r], &TableSpec { run_key: D1P, format: TableFormat::Json }).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        let row = &v["rows"][0];
        assert_eq!(row["accuracy"], 0.87);
        assert_eq!(row["full_precision"]["accuracy"], 0.8712345);
        assert_eq!(row["execution_time"], "5h 27min");
    }

    #[test]
    fn mixed_keys_and_duplicates_are_rejected() {
        let spec = TableSpec { run_key: D1P, format: TableFormat::Markdown };
        let mixed = vec![record("VGG16", D1P, 10.0, 0.9), record("VGG16", D1, 10.0, 0.9)];
        assert!(matches!(render_table(&mixed, &spec), Err(ReportError::MixedRunKeys { .. })));
        let dup = vec![record("VGG16", D1P, 10.0, 0.9), record("VGG16", D1P, 20.0, 0.8)];
        assert!(matches!(render_table(&dup, &spec), Err(ReportError::DuplicateModel(_))));
    }

    #[test]
    fn rendering_is_pure() {
        let records = vec![record("Xception", D1P, 12000.0, 0.9)];
        let spec = TableSpec { run_key: D1P, format: TableFormat::Markdown };
        assert_eq!(render_table(&records, &spec).unwrap(), render_table(&records, &spec).unwrap());
    }

    #[test]
    fn comparison_reports_delta_and_speedup() {
        let records = vec![
            record("VGG16", D1P, 19620.0, 0.87),
            record("VGG16", D1, 2022.0, 0.92),
            record("Densenet", D1P, 16920.0, 0.89),
        ];
        let text = render_comparison(&records).unwrap();
        assert!(text.contains("VGG16 on Device1"), "{text}");
        assert!(text.contains("4h 54min less"), "{text}");
        assert!(text.contains("9.70\u{00d7}"), "{text}");
        assert!(text.contains("\u{0394}accuracy = +0.05"), "{text}");
        assert!(text.contains("unpaired: Densenet (D_1')"), "{text}");
        assert!(text.contains("1 of 1 paired models ran faster"), "{text}");
    }

    #[test]
    fn identical_records_under_both_keys_compare_as_equal() {
        let records = vec![record("VGG16", D1P, 500.0, 0.9), record("VGG16", D1, 500.0, 0.9)];
        let text = render_comparison(&records).unwrap();
        assert!(text.contains("1.00\u{00d7}"), "{text}");
        assert!(text.contains("0 of 1 paired"), "{text}");
    }

    #[test]
    fn no_pairs_is_an_error() {
        let records = vec![record("VGG16", D1P, 500.0, 0.9)];
        assert!(matches!(render_comparison(&records), Err(ReportError::NoComparablePairs)));
        assert!(unpaired_listing(&records).contains("VGG16 under D_1'"));
    }
}

//! Report rendering: a machine-readable CSV and an aligned text table for
//! metric reports, threshold-sweep tables, reward breakdowns, and an
//! embedding-coordinate export for external plotting.
//!
//! Metrics are rendered as percentages everywhere (a fraction of 0.4189 is
//! written `41.89` in text and `41.8900` in CSV). Formatting is fixed-width
//! decimal, so identical reports produce identical bytes.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::metrics::{MetricReport, SampleEvaluation, Stat, SweepTable};
use crate::reward::RewardBreakdown;
use crate::vector::Embedding;

/// Fraction to percentage.
pub fn percent(fraction: f64) -> f64 {
    fraction * 100.0
}

fn pct_csv(fraction: f64) -> String {
    format!("{:.4}", percent(fraction))
}

fn pct_text(fraction: f64) -> String {
    format!("{:.2}", percent(fraction))
}

fn stat_text(s: &Stat) -> String {
    format!("{:.2} ± {:.2}", percent(s.mean), percent(s.std))
}

fn to_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Ks that appear in any report, excluding the K=1 statistics block.
fn columns(reports: &[MetricReport]) -> (Vec<usize>, bool, bool, bool) {
    let ks: BTreeSet<usize> = reports
        .iter()
        .flat_map(|r| r.rows.iter().map(|row| row.k))
        .collect();
    let pass = reports
        .iter()
        .any(|r| r.rows.iter().any(|row| row.pass_at_k.is_some()));
    let single = reports.iter().any(|r| r.single_round.is_some());
    let pass1 = reports.iter().any(|r| {
        r.single_round
            .as_ref()
            .is_some_and(|s| s.pass_at_1.is_some())
    });
    (ks.into_iter().collect(), pass, single, pass1)
}

/// One row per report; one column per metric at each K, plus K=1 mean and
/// std columns when available. Missing cells are empty.
pub fn metrics_csv(reports: &[MetricReport]) -> Result<String> {
    let (ks, pass, single, pass1) = columns(reports);
    let mut header = vec!["config".to_string(), "samples".to_string()];
    for k in &ks {
        header.extend([format!("SP@{k}"), format!("SR@{k}"), format!("VR@{k}")]);
        if pass {
            header.push(format!("Pass@{k}"));
        }
    }
    if single {
        for m in ["SP", "SR", "VR"] {
            header.extend([format!("{m}@1_mean"), format!("{m}@1_std")]);
        }
        if pass1 {
            header.extend(["Pass@1_mean".to_string(), "Pass@1_std".to_string()]);
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).map_err(csv_err)?;
    for r in reports {
        let mut rec = vec![r.label.clone(), r.samples.to_string()];
        for &k in &ks {
            match r.row(k) {
                Some(row) => {
                    rec.extend([
                        pct_csv(row.soft_pass),
                        pct_csv(row.soft_recall),
                        pct_csv(row.valid_ratio),
                    ]);
                    if pass {
                        rec.push(row.pass_at_k.map(pct_csv).unwrap_or_default());
                    }
                }
                None => rec.extend(std::iter::repeat_n(String::new(), 3 + pass as usize)),
            }
        }
        if single {
            let cells = |s: Option<&Stat>| match s {
                Some(s) => [pct_csv(s.mean), pct_csv(s.std)],
                None => [String::new(), String::new()],
            };
            let sr = r.single_round.as_ref();
            rec.extend(cells(sr.map(|s| &s.soft_pass)));
            rec.extend(cells(sr.map(|s| &s.soft_recall)));
            rec.extend(cells(sr.map(|s| &s.valid_ratio)));
            if pass1 {
                rec.extend(cells(sr.and_then(|s| s.pass_at_1.as_ref())));
            }
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    to_string(w)
}

/// Renders rows of cells with the first column left-aligned and the rest
/// right-aligned, separated by two spaces.
fn align(rows: &[Vec<String>]) -> String {
    let ncol = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut width = vec![0; ncol];
    for r in rows {
        for (i, c) in r.iter().enumerate() {
            width[i] = width[i].max(c.chars().count());
        }
    }
    let mut out = String::new();
    for r in rows {
        let mut line = String::new();
        for (i, c) in r.iter().enumerate() {
            let pad = width[i] - c.chars().count();
            if i == 0 {
                line.push_str(c);
                line.push_str(&" ".repeat(pad));
            } else {
                line.push_str("  ");
                line.push_str(&" ".repeat(pad));
                line.push_str(c);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

/// Human-readable table: metrics as percentages, K=1 as `mean ± std`.
pub fn render_metrics(reports: &[MetricReport]) -> String {
    let (ks, pass, single, pass1) = columns(reports);
    let mut header = vec!["config".to_string()];
    if single {
        header.extend(["SP@1".into(), "SR@1".into(), "VR@1".into()]);
        if pass1 {
            header.push("Pass@1".into());
        }
    }
    for k in &ks {
        header.extend([format!("SP@{k}"), format!("SR@{k}"), format!("VR@{k}")]);
        if pass {
            header.push(format!("Pass@{k}"));
        }
    }
    let mut rows = vec![header];
    for r in reports {
        let mut rec = vec![r.label.clone()];
        if single {
            match &r.single_round {
                Some(s) => {
                    rec.extend([
                        stat_text(&s.soft_pass),
                        stat_text(&s.soft_recall),
                        stat_text(&s.valid_ratio),
                    ]);
                    if pass1 {
                        rec.push(
                            s.pass_at_1
                                .as_ref()
                                .map(stat_text)
                                .unwrap_or_else(|| "-".into()),
                        );
                    }
                }
                None => rec.extend(std::iter::repeat_n("-".to_string(), 3 + pass1 as usize)),
            }
        }
        for &k in &ks {
            match r.row(k) {
                Some(row) => {
                    rec.extend([
                        pct_text(row.soft_pass),
                        pct_text(row.soft_recall),
                        pct_text(row.valid_ratio),
                    ]);
                    if pass {
                        rec.push(row.pass_at_k.map(pct_text).unwrap_or_else(|| "-".into()));
                    }
                }
                None => rec.extend(std::iter::repeat_n("-".to_string(), 3 + pass as usize)),
            }
        }
        rows.push(rec);
    }
    align(&rows)
}

/// Long-format CSV: `config, metric, tau, K, value`.
pub fn sweep_csv(tables: &[(&str, &SweepTable)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["config", "metric", "tau", "K", "value"])
        .map_err(csv_err)?;
    for (label, t) in tables {
        let k = t.k.to_string();
        for &(tau, sp, sr) in &t.match_rows {
            let tau = format!("{tau:.2}");
            w.write_record([*label, "SP", &tau, &k, &pct_csv(sp)])
                .map_err(csv_err)?;
            w.write_record([*label, "SR", &tau, &k, &pct_csv(sr)])
                .map_err(csv_err)?;
        }
        for &(tau, vr) in &t.valid_rows {
            w.write_record([*label, "VR", &format!("{tau:.2}"), &k, &pct_csv(vr)])
                .map_err(csv_err)?;
        }
    }
    to_string(w)
}

/// Thresholds down, metrics across: one block for the matching threshold
/// (SoftPass and SoftRecall) and one for the relevance threshold.
pub fn render_sweep(tables: &[(&str, &SweepTable)]) -> String {
    let mut rows = vec![];
    let taus = |f: &dyn Fn(&SweepTable) -> Vec<f64>| -> Vec<f64> {
        let mut v: Vec<f64> = tables.iter().flat_map(|(_, t)| f(t)).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let match_taus = taus(&|t| t.match_rows.iter().map(|r| r.0).collect());
    let valid_taus = taus(&|t| t.valid_rows.iter().map(|r| r.0).collect());

    let mut header = vec!["tau_sp = tau_sr".to_string()];
    for (label, t) in tables {
        header.extend([format!("{label} SP@{}", t.k), format!("{label} SR@{}", t.k)]);
    }
    rows.push(header);
    for tau in &match_taus {
        let mut rec = vec![format!("{tau:.2}")];
        for (_, t) in tables {
            match t.match_rows.iter().find(|r| r.0 == *tau) {
                Some(&(_, sp, sr)) => rec.extend([pct_text(sp), pct_text(sr)]),
                None => rec.extend(["-".into(), "-".into()]),
            }
        }
        rows.push(rec);
    }
    let mut out = align(&rows);
    out.push('\n');

    let mut rows = vec![];
    let mut header = vec!["tau_valid".to_string()];
    for (label, t) in tables {
        header.push(format!("{label} VR@{}", t.k));
    }
    rows.push(header);
    for tau in &valid_taus {
        let mut rec = vec![format!("{tau:.2}")];
        for (_, t) in tables {
            rec.push(match t.valid_rows.iter().find(|r| r.0 == *tau) {
                Some(&(_, vr)) => pct_text(vr),
                None => "-".into(),
            });
        }
        rows.push(rec);
    }
    out.push_str(&align(&rows));
    out
}

/// One row per (sample, rollout). Values use the shortest representation
/// that round-trips, so the file is exact.
pub fn breakdown_csv(rows: &[(&str, &RewardBreakdown)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "sample_id",
        "rollout",
        "r_validity",
        "r_intra",
        "s_raw",
        "gate",
        "r_inter",
        "composite",
    ])
    .map_err(csv_err)?;
    for (id, b) in rows {
        w.write_record([
            id.to_string(),
            b.rollout_index.to_string(),
            b.r_validity.to_string(),
            b.r_intra.to_string(),
            b.s_raw.to_string(),
            b.gate.to_string(),
            b.r_inter.to_string(),
            b.composite.to_string(),
        ])
        .map_err(csv_err)?;
    }
    to_string(w)
}

/// Coordinates of every hypothesis with its round (from 1), position (from
/// 0), validity flag and best-match score. All vectors must share one
/// dimension.
pub fn embedding_csv(items: &[(&[Vec<Embedding>], &SampleEvaluation)]) -> Result<String> {
    let dim = items
        .iter()
        .flat_map(|(rounds, _)| rounds.iter().flatten())
        .map(Embedding::dim)
        .next()
        .unwrap_or(0);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["sample_id", "round", "index", "valid", "score"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..dim).map(|i| format!("x{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for (rounds, eval) in items {
        if eval.k > rounds.len() {
            return Err(Error::Structure(format!(
                "sample '{}' evaluated at K={} but only {} rounds exported",
                eval.sample_id,
                eval.k,
                rounds.len()
            )));
        }
        for (k, round) in rounds.iter().take(eval.k).enumerate() {
            for (i, h) in round.iter().enumerate() {
                if h.dim() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: h.dim(),
                    });
                }
                let mut rec = vec![
                    eval.sample_id.clone(),
                    (k + 1).to_string(),
                    i.to_string(),
                    (eval.valid_flags[k][i] as u8).to_string(),
                    eval.best_match[k][i].to_string(),
                ];
                rec.extend(h.values().iter().map(f64::to_string));
                w.write_record(&rec).map_err(csv_err)?;
            }
        }
    }
    to_string(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{EvaluationConfig, MetricRow, SingleRoundStats};

    fn report(label: &str, sp: f64, pass: Option<f64>) -> MetricReport {
        MetricReport {
            label: label.into(),
            samples: 3,
            config: EvaluationConfig::default(),
            rows: vec![MetricRow {
                k: 16,
                soft_pass: sp,
                soft_recall: 0.2429,
                valid_ratio: 0.0914,
                pass_at_k: pass,
            }],
            single_round: Some(SingleRoundStats {
                rounds: 16,
                soft_pass: Stat {
                    mean: 0.1,
                    std: 0.01,
                },
                soft_recall: Stat {
                    mean: 0.05,
                    std: 0.0,
                },
                valid_ratio: Stat {
                    mean: 0.5,
                    std: 0.125,
                },
                pass_at_1: None,
            }),
        }
    }

    #[test]
    fn percentage_convention() {
        // format fixture: a published-looking row renders with two decimals
        let text = render_metrics(&[report("scatter", 0.4189, None)]);
        assert!(text.contains("41.89"), "{text}");
        assert!(text.contains("24.29"));
        assert!(text.contains("9.14"));
        assert!(text.contains("10.00 ± 1.00"));
        let csv = metrics_csv(&[report("scatter", 1.0, None)]).unwrap();
        assert!(
            csv.lines()
                .nth(1)
                .unwrap()
                .starts_with("scatter,3,100.0000,24.2900,9.1400"),
            "{csv}"
        );
    }

    #[test]
    fn csv_columns_and_pass_column() {
        let csv = metrics_csv(&[report("a", 0.5, Some(0.25)), report("b", 0.5, None)]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "config,samples,SP@16,SR@16,VR@16,Pass@16,SP@1_mean,SP@1_std,SR@1_mean,SR@1_std,VR@1_mean,VR@1_std"
        );
        assert_eq!(lines[1].split(',').nth(5), Some("25.0000"));
        assert_eq!(lines[2].split(',').nth(5), Some(""));
    }

    #[test]
    fn text_is_aligned() {
        let text = render_metrics(&[
            report("short", 0.5, None),
            report("a-much-longer-name", 0.05, None),
        ]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        let widths: Vec<usize> = lines.iter().map(|l| l.chars().count()).collect();
        assert!(widths.iter().all(|&w| w == widths[0]), "{text}");
    }

    #[test]
    fn sweep_layout() {
        let t = SweepTable {
            k: 16,
            match_rows: vec![(0.7, 0.7851, 0.5), (0.8, 0.3026, 0.2), (0.9, 0.0987, 0.1)],
            valid_rows: vec![(0.4, 0.3), (0.5, 0.2), (0.6, 0.1)],
        };
        let text = render_sweep(&[("scatter", &t)]);
        let lines: Vec<&str> = text.lines().collect();
        assert!(
            lines[1].starts_with("0.70") && lines[1].contains("78.51"),
            "{text}"
        );
        assert!(lines[2].contains("30.26") && lines[3].contains("9.87"));
        assert!(lines[5].contains("VR@16"));
        let csv = sweep_csv(&[("scatter", &t)]).unwrap();
        assert_eq!(csv.lines().count(), 1 + 6 + 3);
        assert!(csv.contains("scatter,SP,0.70,16,78.5100"));
    }

    #[test]
    fn breakdown_values_round_trip() {
        let b = RewardBreakdown {
            rollout_index: 1,
            r_validity: 0.1 + 0.2,
            composite: 2.0,
            ..Default::default()
        };
        let csv = breakdown_csv(&[("s", &b)]).unwrap();
        let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(row[2].parse::<f64>().unwrap(), 0.1 + 0.2);
        assert_eq!(row[7], "2");
    }

    #[test]
    fn embedding_export() {
        let rounds = vec![vec![
            Embedding::new(vec![1.0, 0.0]).unwrap(),
            Embedding::new(vec![0.0, 1.0]).unwrap(),
        ]];
        let eval = SampleEvaluation {
            sample_id: "s".into(),
            k: 1,
            config: EvaluationConfig::default(),
            best_match: vec![vec![1.0, 0.25]],
            soft_pass: true,
            soft_recall: 1.0,
            valid_flags: vec![vec![true, false]],
            valid_ratio: 0.5,
        };
        let csv = embedding_csv(&[(&rounds, &eval)]).unwrap();
        assert_eq!(
            csv,
            "sample_id,round,index,valid,score,x0,x1\ns,1,0,1,1,1,0\ns,1,1,0,0.25,0,1\n"
        );
    }
}

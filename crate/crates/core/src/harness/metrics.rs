//! Metrics table persistence and cross-replicate summaries.

use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::config::Scheme;
use super::experiment::RoundMetrics;
use super::report::BoundReport;
use crate::error::{Error, Result};

pub const METRICS_HEADER: [&str; 11] = [
    "replicate",
    "round",
    "scheme",
    "global_loss",
    "test_accuracy",
    "h_value",
    "phi_value",
    "min_dl_snr_db",
    "sum_alpha",
    "wall_ms",
    "aborted",
];

/// Shortest decimal that parses back to the same `f64`.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_metrics_csv(rows: &[RoundMetrics], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    w.write_record(METRICS_HEADER).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record([
            r.replicate.to_string(),
            r.round.to_string(),
            r.scheme.name().to_string(),
            fmt_f64(r.global_loss),
            fmt_f64(r.test_accuracy),
            fmt_f64(r.h_value),
            fmt_f64(r.phi_value),
            fmt_f64(r.min_dl_snr_db),
            fmt_f64(r.sum_alpha),
            fmt_f64(r.wall_ms),
            r.aborted.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Evaluation(format!("{}: {other:?}", path.display())),
    }
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<RoundMetrics>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_HEADER {
        return Err(Error::Format {
            offset: 0,
            msg: format!("unexpected header {header:?}"),
        });
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let offset = rec.position().map_or(0, |p| p.byte() as usize);
        let bad = |what: &str| Error::Format {
            offset,
            msg: format!("bad {what}"),
        };
        let f = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(METRICS_HEADER[i]));
        out.push(RoundMetrics {
            replicate: rec[0].parse().map_err(|_| bad("replicate"))?,
            round: rec[1].parse().map_err(|_| bad("round"))?,
            scheme: Scheme::parse(&rec[2])?,
            global_loss: f(3)?,
            test_accuracy: f(4)?,
            h_value: f(5)?,
            phi_value: f(6)?,
            min_dl_snr_db: f(7)?,
            sum_alpha: f(8)?,
            wall_ms: f(9)?,
            aborted: rec[10].parse().map_err(|_| bad("aborted"))?,
        });
    }
    Ok(out)
}

/// Mean and two-sided 90% Student-t interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

pub fn band90(values: &[f64]) -> Band {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return Band { mean, lo: mean, hi: mean };
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.95);
    let half = t * (var / n as f64).sqrt();
    Band {
        mean,
        lo: mean - half,
        hi: mean + half,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub round: usize,
    pub accuracy: Band,
    pub loss_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub scheme: Scheme,
    pub replicates: usize,
    pub final_round: usize,
    pub final_accuracy: Band,
    pub final_loss_mean: f64,
    pub aborted_rounds: usize,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub version: u32,
    pub master_seed: u64,
    pub schemes: Vec<SchemeSummary>,
    pub bound: Option<BoundReport>,
}

/// Per-scheme, per-round means and 90% bands across replicates.
pub fn summarize(rows: &[RoundMetrics], master_seed: u64, bound: Option<BoundReport>) -> Summary {
    let mut schemes: Vec<Scheme> = Vec::new();
    for r in rows {
        if !schemes.contains(&r.scheme) {
            schemes.push(r.scheme);
        }
    }
    let schemes = schemes
        .into_iter()
        .map(|s| {
            let mine: Vec<&RoundMetrics> = rows.iter().filter(|r| r.scheme == s).collect();
            let final_round = mine.iter().map(|r| r.round).max().unwrap_or(0);
            let curve: Vec<CurvePoint> = (0..=final_round)
                .map(|t| {
                    let at: Vec<&&RoundMetrics> = mine.iter().filter(|r| r.round == t).collect();
                    let acc: Vec<f64> = at.iter().map(|r| r.test_accuracy).collect();
                    CurvePoint {
                        round: t,
                        accuracy: band90(&acc),
                        loss_mean: at.iter().map(|r| r.global_loss).sum::<f64>() / at.len().max(1) as f64,
                    }
                })
                .collect();
            let last = curve.last().cloned().expect("round 0 always present");
            SchemeSummary {
                scheme: s,
                replicates: mine.iter().filter(|r| r.round == 0).count(),
                final_round,
                final_accuracy: last.accuracy,
                final_loss_mean: last.loss_mean,
                aborted_rounds: mine.iter().filter(|r| r.aborted).count(),
                curve,
            }
        })
        .collect();
    Summary {
        version: 1,
        master_seed,
        schemes,
        bound,
    }
}

/// Writes `metrics.csv` and `summary.json` into `dir`.
pub fn emit_metrics(rows: &[RoundMetrics], summary: &Summary, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_metrics_csv(rows, &dir.join("metrics.csv"))?;
    let path = dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(summary).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(rep: usize, round: usize, scheme: Scheme, acc: f64) -> RoundMetrics {
        RoundMetrics {
            replicate: rep,
            round,
            scheme,
            global_loss: 1.0 / 3.0,
            test_accuracy: acc,
            h_value: f64::NAN,
            phi_value: 1e-300,
            min_dl_snr_db: -12.345678901234567,
            sum_alpha: 2.5e-7,
            wall_ms: 0.0,
            aborted: round == 2,
        }
    }

    fn same(a: &RoundMetrics, b: &RoundMetrics) -> bool {
        let f = |x: f64, y: f64| x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan());
        a.replicate == b.replicate
            && a.round == b.round
            && a.scheme == b.scheme
            && f(a.global_loss, b.global_loss)
            && f(a.test_accuracy, b.test_accuracy)
            && f(a.h_value, b.h_value)
            && f(a.phi_value, b.phi_value)
            && f(a.min_dl_snr_db, b.min_dl_snr_db)
            && f(a.sum_alpha, b.sum_alpha)
            && f(a.wall_ms, b.wall_ms)
            && a.aborted == b.aborted
    }

    #[test]
    fn empty_table_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics_csv(&[], &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), METRICS_HEADER.join(",") + "\n");
        assert!(read_metrics_csv(&p).unwrap().is_empty());
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![row(0, 0, Scheme::Jdu, 0.25), row(0, 1, Scheme::Jdu, 0.7), row(1, 2, Scheme::Rbf, 0.123456789)];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics_csv(&rows, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(!text.contains('\r'));
        let back = read_metrics_csv(&p).unwrap();
        assert_eq!(back.len(), rows.len());
        for (a, b) in rows.iter().zip(&back) {
            assert!(same(a, b), "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn io_errors_name_the_path() {
        let p = Path::new("/nonexistent-dir/metrics.csv");
        match write_metrics_csv(&[], p) {
            Err(Error::Io { path, .. }) => assert_eq!(path, p),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn band_collapses_for_single_replicate() {
        let b = band90(&[0.7]);
        assert_eq!((b.lo, b.mean, b.hi), (0.7, 0.7, 0.7));
    }

    #[test]
    fn band_matches_t_table() {
        // n = 2, t_{0.95, 1} = 6.3138, s = sqrt(2)/2, half = 6.3138 * 0.5
        let b = band90(&[0.0, 1.0]);
        assert!((b.hi - 0.5 - 6.313751514675 * 0.5).abs() < 1e-9);
        assert_eq!(b.mean, 0.5);
    }

    #[test]
    fn summary_per_scheme() {
        let rows = vec![
            row(0, 0, Scheme::Jdu, 0.25),
            row(0, 1, Scheme::Jdu, 0.8),
            row(1, 0, Scheme::Jdu, 0.25),
            row(1, 1, Scheme::Jdu, 0.6),
            row(0, 0, Scheme::Ideal, 0.25),
            row(0, 1, Scheme::Ideal, 0.9),
        ];
        let s = summarize(&rows, 3, None);
        assert_eq!(s.schemes.len(), 2);
        assert_eq!(s.schemes[0].replicates, 2);
        assert!((s.schemes[0].final_accuracy.mean - 0.7).abs() < 1e-12);
        assert_eq!(s.schemes[1].final_accuracy.lo, 0.9);
    }
}

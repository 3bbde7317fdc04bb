//! SNR sweeps over evaluation arms, the CSV report and an SVG plot.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use super::config::{format_snr, parse_snr};
use super::dataset::Dataset;
use super::eval::{evaluate, Arm, EvalMetrics};
use super::train::Model;
use crate::channel::{derive_seed, SnrSpec};
use crate::error::{Error, Result};
use crate::parallel::map_indexed;
use crate::tensor::ParamStore;

pub const CSV_COLUMNS: [&str; 8] = [
    "arm",
    "snr_test_db",
    "map",
    "miou",
    "feature_l1",
    "decode_success_rate",
    "equivalent_ratio",
    "snr_train_db",
];

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub arm: String,
    /// `None` is the noiseless channel.
    pub snr_test_db: Option<f64>,
    pub map: f64,
    pub miou: f64,
    pub feature_l1: f64,
    pub decode_success_rate: Option<f64>,
    pub equivalent_ratio: f64,
    pub snr_train_db: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SweepMeta {
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub meta: SweepMeta,
    pub rows: Vec<SweepRow>,
}

/// Parameters an arm is evaluated with: the JSCC arm uses the end-to-end
/// checkpoint, the direct and separate arms the step-1 network.
pub struct ArmStores<'a> {
    pub jscc: &'a ParamStore<f32>,
    pub base: &'a ParamStore<f32>,
}

/// Evaluates every (arm, SNR) pair on the test split. Grid points are
/// independent jobs; each derives its own noise seed from `seed`.
pub fn run_sweep(
    model: &Model,
    stores: &ArmStores,
    data: &Dataset,
    grid: &[Option<f64>],
    arms: &[Arm],
    snr_train: Option<f64>,
    meta: SweepMeta,
) -> Result<SweepReport> {
    if grid.is_empty() || arms.is_empty() {
        return Err(Error::config("sweep needs at least one SNR and one arm"));
    }
    let test: Vec<usize> = data.test_indices().collect();
    let jobs: Vec<(Arm, Option<f64>)> = arms.iter().flat_map(|&a| grid.iter().map(move |&s| (a, s))).collect();
    let results: Vec<Result<EvalMetrics>> = map_indexed(jobs.len(), |j| {
        let (arm, snr) = jobs[j];
        let store = if arm == Arm::Jscc { stores.jscc } else { stores.base };
        let point_seed = derive_seed(meta.seed, (j % grid.len()) as u64);
        evaluate(model, store, data, &test, arm, &SnrSpec::from_option(snr), point_seed)
    });
    let mut rows = Vec::with_capacity(jobs.len());
    for ((arm, snr), r) in jobs.into_iter().zip(results) {
        let m = r?;
        rows.push(SweepRow {
            arm: arm.label(),
            snr_test_db: snr,
            map: m.map,
            miou: m.miou,
            feature_l1: m.feature_l1,
            decode_success_rate: m.decode_success,
            equivalent_ratio: m.equivalent_ratio,
            snr_train_db: if arm == Arm::Jscc { snr_train } else { None },
        });
    }
    Ok(SweepReport { meta, rows })
}

/// Min-max regret choice among models trained at different SNRs. Each
/// candidate's score at a test SNR is the mean of mAP and mIoU on `arm`;
/// its regret there is the gap to the best candidate. Returns the index of
/// the candidate with the smallest worst-case regret, and that regret,
/// over the test SNRs every candidate reports.
pub fn min_regret(candidates: &[&SweepReport], arm: &str) -> Option<(usize, f64)> {
    let score = |r: &SweepReport, snr: f64| {
        r.rows
            .iter()
            .find(|row| row.arm == arm && row.snr_test_db == Some(snr))
            .map(|row| (row.map + row.miou) / 2.0)
    };
    let first = candidates.first()?;
    let grid: Vec<f64> = first
        .rows
        .iter()
        .filter(|r| r.arm == arm)
        .filter_map(|r| r.snr_test_db)
        .filter(|&s| candidates.iter().all(|c| score(c, s).is_some()))
        .collect();
    if grid.is_empty() {
        return None;
    }
    let mut worst = vec![0.0f64; candidates.len()];
    for &snr in &grid {
        let scores: Vec<f64> = candidates.iter().map(|c| score(c, snr).expect("filtered")).collect();
        let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (w, s) in worst.iter_mut().zip(&scores) {
            *w = w.max(best - s);
        }
    }
    worst
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

impl SweepReport {
    /// Metadata as `#` comment lines, then a header row and one row per point.
    /// Floats use the shortest representation that parses back exactly.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# config_hash={}", self.meta.config_hash)?;
        writeln!(w, "# version={}", self.meta.version)?;
        writeln!(w, "# seed={}", self.meta.seed)?;
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(CSV_COLUMNS)?;
        for r in &self.rows {
            csv.write_record([
                r.arm.clone(),
                format_snr(r.snr_test_db),
                r.map.to_string(),
                r.miou.to_string(),
                r.feature_l1.to_string(),
                opt(r.decode_success_rate),
                r.equivalent_ratio.to_string(),
                format_snr(r.snr_train_db),
            ])?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::format(e.to_string()))
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<SweepReport> {
        let mut text = String::new();
        let mut meta = (None, None, None);
        for line in r.lines() {
            let line = line?;
            if let Some(m) = line.strip_prefix("# ") {
                match m.split_once('=') {
                    Some(("config_hash", v)) => meta.0 = Some(v.to_string()),
                    Some(("version", v)) => meta.1 = Some(v.to_string()),
                    Some(("seed", v)) => meta.2 = v.parse().ok(),
                    _ => {}
                }
            } else {
                text.push_str(&line);
                text.push('\n');
            }
        }
        let (Some(config_hash), Some(version), Some(seed)) = meta else {
            return Err(Error::format("sweep CSV lacks metadata lines"));
        };
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        if rdr.headers()?.iter().ne(CSV_COLUMNS) {
            return Err(Error::format("unexpected CSV header"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::format(format!("bad number `{s}`")));
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let f = |i: usize| rec.get(i).unwrap_or("");
            rows.push(SweepRow {
                arm: f(0).to_string(),
                snr_test_db: parse_snr(f(1)).map_err(|e| Error::format(e.to_string()))?,
                map: num(f(2))?,
                miou: num(f(3))?,
                feature_l1: num(f(4))?,
                decode_success_rate: if f(5).is_empty() { None } else { Some(num(f(5))?) },
                equivalent_ratio: num(f(6))?,
                snr_train_db: parse_snr(f(7)).map_err(|e| Error::format(e.to_string()))?,
            });
        }
        Ok(SweepReport {
            meta: SweepMeta {
                config_hash,
                version,
                seed,
            },
            rows,
        })
    }

    /// Two panels (mAP, mIoU) against test SNR, one polyline per arm.
    /// Noiseless rows are omitted.
    pub fn to_svg(&self) -> String {
        const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];
        let (pw, ph, ml, mt) = (360.0, 260.0, 50.0, 30.0);
        let pts: Vec<&SweepRow> = self.rows.iter().filter(|r| r.snr_test_db.is_some()).collect();
        let xs: Vec<f64> = pts.iter().filter_map(|r| r.snr_test_db).collect();
        let (x0, x1) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let (x0, x1) = if x0.is_finite() && x1 > x0 { (x0, x1) } else { (0.0, 1.0) };
        let mut arms: Vec<&str> = Vec::new();
        for r in &pts {
            if !arms.contains(&r.arm.as_str()) {
                arms.push(&r.arm);
            }
        }
        let mut s = String::new();
        let total_w = 2.0 * (pw + ml) + 160.0;
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" height="{}" font-family="sans-serif" font-size="11">"#,
            ph + mt + 40.0
        );
        for (panel, (title, get)) in [("mAP", (|r: &SweepRow| r.map) as fn(&SweepRow) -> f64), ("mIoU", |r: &SweepRow| r.miou)]
            .into_iter()
            .enumerate()
        {
            let ox = ml + panel as f64 * (pw + ml);
            let sx = |v: f64| ox + (v - x0) / (x1 - x0) * pw;
            let sy = |v: f64| mt + (1.0 - v.clamp(0.0, 1.0)) * ph;
            let _ = writeln!(s, r#"<rect x="{ox}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{title}</text>"#, ox + pw / 2.0, mt - 10.0);
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle">test SNR (dB)</text>"#,
                ox + pw / 2.0,
                mt + ph + 32.0
            );
            for i in 0..=4 {
                let v = i as f64 / 4.0;
                let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v:.2}</text>"#, ox - 4.0, sy(v) + 4.0);
                let xv = x0 + v * (x1 - x0);
                let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xv}</text>"#, sx(xv), mt + ph + 16.0);
            }
            for (a, arm) in arms.iter().enumerate() {
                let mut line: Vec<(f64, f64)> = pts
                    .iter()
                    .filter(|r| r.arm == *arm)
                    .map(|r| (r.snr_test_db.expect("filtered"), get(r)))
                    .collect();
                line.sort_by(|p, q| p.0.total_cmp(&q.0));
                let coords: Vec<String> = line.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
                let _ = writeln!(
                    s,
                    r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                    COLORS[a % COLORS.len()],
                    coords.join(" ")
                );
            }
        }
        for (a, arm) in arms.iter().enumerate() {
            let (lx, ly) = (2.0 * (pw + ml) + 10.0, mt + 14.0 * a as f64 + 8.0);
            let _ = writeln!(
                s,
                r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"/><text x="{}" y="{}">{arm}</text>"#,
                lx + 16.0,
                COLORS[a % COLORS.len()],
                lx + 20.0,
                ly + 4.0
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> SweepReport {
        SweepReport {
            meta: SweepMeta {
                config_hash: "ab".repeat(32),
                version: "0.1.0".into(),
                seed: 9,
            },
            rows: vec![
                SweepRow {
                    arm: "jscc".into(),
                    snr_test_db: Some(2.5),
                    map: 0.1 + 0.2,
                    miou: 1.0 / 3.0,
                    feature_l1: 1e-7,
                    decode_success_rate: None,
                    equivalent_ratio: 512.0,
                    snr_train_db: Some(5.0),
                },
                SweepRow {
                    arm: "q75-conv-bpsk".into(),
                    snr_test_db: None,
                    map: 0.7,
                    miou: 0.123_456_789_012_345_67,
                    feature_l1: 0.0,
                    decode_success_rate: Some(0.99),
                    equivalent_ratio: 0.1234,
                    snr_train_db: None,
                },
            ],
        }
    }

    #[test]
    fn csv_round_trips_exactly() {
        let r = report();
        let text = r.to_csv_string().unwrap();
        assert!(text.starts_with("# config_hash="));
        assert!(text.contains("arm,snr_test_db,map,miou"));
        assert_eq!(SweepReport::read_csv(text.as_bytes()).unwrap(), r);
    }

    fn curve(points: &[(f64, f64)]) -> SweepReport {
        let mut r = report();
        r.rows = points
            .iter()
            .map(|&(snr, m)| SweepRow {
                arm: "jscc".into(),
                snr_test_db: Some(snr),
                map: m,
                miou: m,
                feature_l1: 0.0,
                decode_success_rate: None,
                equivalent_ratio: 128.0,
                snr_train_db: None,
            })
            .collect();
        r
    }

    #[test]
    fn min_regret_prefers_the_balanced_model() {
        let low = curve(&[(0.0, 0.5), (10.0, 0.6), (20.0, 0.6)]);
        let mid = curve(&[(0.0, 0.45), (10.0, 0.7), (20.0, 0.72)]);
        let high = curve(&[(0.0, 0.2), (10.0, 0.72), (20.0, 0.8)]);
        // Worst regrets: low 0.2, mid 0.08, high 0.3.
        let (i, regret) = min_regret(&[&low, &mid, &high], "jscc").unwrap();
        assert_eq!(i, 1);
        assert!((regret - 0.08).abs() < 1e-12);
        assert_eq!(min_regret(&[&low], "direct"), None);
    }

    #[test]
    fn svg_has_one_line_per_arm_and_panel() {
        let svg = report().to_svg();
        assert!(svg.starts_with("<svg"));
        // The noiseless row is left out of the plot: one arm, two panels.
        assert_eq!(svg.matches("<polyline").count(), 2);
    }
}

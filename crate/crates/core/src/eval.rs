//! Depth, surface-normal and classification metrics, pooled over pixels.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::{DepthMap, NormalMap};

/// Ground-truth depths at or below this are ignored.
pub const DEPTH_VALID_MIN: f32 = 1e-3;
pub const NORMAL_THRESHOLDS_DEG: [f64; 3] = [11.25, 22.5, 30.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub rms: f64,
    pub rel: f64,
    pub log10: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalMetrics {
    pub mean_deg: f64,
    pub median_deg: f64,
    pub pct_11_25: f64,
    pub pct_22_5: f64,
    pub pct_30: f64,
}

fn check_sizes(a: (usize, usize), b: (usize, usize), i: usize) -> Result<()> {
    if a != b {
        return Err(Error::Metric(format!("sample {i}: prediction {}x{} vs target {}x{}", a.0, a.1, b.0, b.1)));
    }
    Ok(())
}

pub fn depth_metrics(pred: &[DepthMap], gt: &[DepthMap]) -> Result<DepthMetrics> {
    if pred.len() != gt.len() {
        return Err(Error::Metric(format!("{} predictions for {} targets", pred.len(), gt.len())));
    }
    let (mut sq, mut rel, mut lg) = (0.0f64, 0.0f64, 0.0f64);
    let mut within = [0usize; 3];
    let mut count = 0usize;
    for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
        check_sizes((p.width, p.height), (g.width, g.height), i)?;
        for (&pv, &gv) in p.data.iter().zip(&g.data) {
            if gv <= DEPTH_VALID_MIN {
                continue;
            }
            let (pv, gv) = (pv as f64, gv as f64);
            sq += (pv - gv).powi(2);
            rel += (pv - gv).abs() / gv;
            lg += (pv.log10() - gv.log10()).abs();
            let ratio = (pv / gv).max(gv / pv);
            for (k, w) in within.iter_mut().enumerate() {
                if ratio < 1.25f64.powi(k as i32 + 1) {
                    *w += 1;
                }
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Metric("no valid depth pixels".into()));
    }
    let n = count as f64;
    Ok(DepthMetrics {
        rms: (sq / n).sqrt(),
        rel: rel / n,
        log10: lg / n,
        delta1: within[0] as f64 / n,
        delta2: within[1] as f64 / n,
        delta3: within[2] as f64 / n,
    })
}

/// Angular errors in degrees over pixels valid in both maps.
pub fn angular_errors(pred: &[NormalMap], gt: &[NormalMap]) -> Result<Vec<f64>> {
    if pred.len() != gt.len() {
        return Err(Error::Metric(format!("{} predictions for {} targets", pred.len(), gt.len())));
    }
    let mut out = Vec::new();
    for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
        check_sizes((p.width, p.height), (g.width, g.height), i)?;
        let hw = p.width * p.height;
        for k in 0..hw {
            if !(p.valid[k] && g.valid[k]) {
                continue;
            }
            let a: [f64; 3] = std::array::from_fn(|c| p.data[c * hw + k] as f64);
            let b: [f64; 3] = std::array::from_fn(|c| g.data[c * hw + k] as f64);
            let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
            let cross = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
            // same angle as acos of the dot for unit vectors, but exact at zero
            let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
            out.push(sin.atan2(dot).to_degrees());
        }
    }
    Ok(out)
}

pub fn normal_metrics(pred: &[NormalMap], gt: &[NormalMap]) -> Result<NormalMetrics> {
    let mut errs = angular_errors(pred, gt)?;
    if errs.is_empty() {
        return Err(Error::Metric("no valid normal pixels".into()));
    }
    let n = errs.len() as f64;
    let mean = errs.iter().sum::<f64>() / n;
    let frac = |t: f64| errs.iter().filter(|&&e| e < t).count() as f64 / n;
    let [a, b, c] = NORMAL_THRESHOLDS_DEG.map(frac);
    errs.sort_by(f64::total_cmp);
    let m = errs.len();
    let median = if m % 2 == 1 { errs[m / 2] } else { 0.5 * (errs[m / 2 - 1] + errs[m / 2]) };
    Ok(NormalMetrics {
        mean_deg: mean,
        median_deg: median,
        pct_11_25: a,
        pct_22_5: b,
        pct_30: c,
    })
}

/// Per-pixel mean of the training depth maps.
pub fn average_baseline(train: &[DepthMap]) -> Result<DepthMap> {
    let first = train.first().ok_or_else(|| Error::Metric("average baseline needs training maps".into()))?;
    let mut acc = vec![0.0f64; first.data.len()];
    for (i, d) in train.iter().enumerate() {
        check_sizes((d.width, d.height), (first.width, first.height), i)?;
        for (a, &v) in acc.iter_mut().zip(&d.data) {
            *a += v as f64;
        }
    }
    let n = train.len() as f64;
    Ok(DepthMap {
        width: first.width,
        height: first.height,
        data: acc.into_iter().map(|a| (a / n) as f32).collect(),
    })
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn classification_accuracy(logits: &[Vec<f32>], labels: &[usize]) -> Result<f64> {
    if logits.is_empty() || logits.len() != labels.len() {
        return Err(Error::Metric(format!("{} logit rows for {} labels", logits.len(), labels.len())));
    }
    let hits = logits.iter().zip(labels).filter(|(l, &y)| argmax(l) == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Metrics {
    Depth(DepthMetrics),
    Normals(NormalMetrics),
    Accuracy { accuracy: f64 },
}

impl Metrics {
    /// The figure each experiment ranks by: RMS, mean angle, or accuracy.
    pub fn headline(&self) -> f64 {
        match self {
            Metrics::Depth(d) => d.rms,
            Metrics::Normals(n) => n.mean_deg,
            Metrics::Accuracy { accuracy } => *accuracy,
        }
    }

    fn values(&self) -> Vec<f64> {
        match *self {
            Metrics::Depth(d) => vec![d.rms, d.rel, d.log10, d.delta1, d.delta2, d.delta3],
            Metrics::Normals(n) => vec![n.mean_deg, n.median_deg, n.pct_11_25, n.pct_22_5, n.pct_30],
            Metrics::Accuracy { accuracy } => vec![accuracy],
        }
    }

    fn with_values(&self, v: &[f64]) -> Metrics {
        match self {
            Metrics::Depth(_) => Metrics::Depth(DepthMetrics {
                rms: v[0],
                rel: v[1],
                log10: v[2],
                delta1: v[3],
                delta2: v[4],
                delta3: v[5],
            }),
            Metrics::Normals(_) => Metrics::Normals(NormalMetrics {
                mean_deg: v[0],
                median_deg: v[1],
                pct_11_25: v[2],
                pct_22_5: v[3],
                pct_30: v[4],
            }),
            Metrics::Accuracy { .. } => Metrics::Accuracy { accuracy: v[0] },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: String,
    pub split: String,
    pub condition: String,
    /// `None` marks a mean over seeds.
    pub seed: Option<u64>,
    pub metrics: Metrics,
    pub samples: usize,
}

impl MetricReport {
    /// Mean of several same-kind reports, e.g. over seeds.
    pub fn mean(reports: &[&MetricReport]) -> Result<MetricReport> {
        let first = reports.first().ok_or_else(|| Error::Metric("mean of no reports".into()))?;
        let mut acc = vec![0.0; first.metrics.values().len()];
        for r in reports {
            let v = r.metrics.values();
            if v.len() != acc.len() || r.condition != first.condition {
                return Err(Error::Metric(format!("cannot average {} with {}", r.condition, first.condition)));
            }
            for (a, x) in acc.iter_mut().zip(v) {
                *a += x;
            }
        }
        let n = reports.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(MetricReport {
            task: first.task.clone(),
            split: first.split.clone(),
            condition: first.condition.clone(),
            seed: None,
            metrics: first.metrics.with_values(&acc),
            samples: first.samples,
        })
    }
}

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    task: &'a str,
    split: &'a str,
    condition: &'a str,
    seed: String,
    samples: usize,
    rms: Option<f64>,
    rel: Option<f64>,
    log10: Option<f64>,
    delta1: Option<f64>,
    delta2: Option<f64>,
    delta3: Option<f64>,
    mean_deg: Option<f64>,
    median_deg: Option<f64>,
    pct_11_25: Option<f64>,
    pct_22_5: Option<f64>,
    pct_30: Option<f64>,
    accuracy: Option<f64>,
}

impl<'a> From<&'a MetricReport> for CsvRow<'a> {
    fn from(r: &'a MetricReport) -> Self {
        let mut row = CsvRow {
            task: &r.task,
            split: &r.split,
            condition: &r.condition,
            seed: r.seed.map_or_else(|| "mean".to_string(), |s| s.to_string()),
            samples: r.samples,
            rms: None,
            rel: None,
            log10: None,
            delta1: None,
            delta2: None,
            delta3: None,
            mean_deg: None,
            median_deg: None,
            pct_11_25: None,
            pct_22_5: None,
            pct_30: None,
            accuracy: None,
        };
        match r.metrics {
            Metrics::Depth(d) => {
                row.rms = Some(d.rms);
                row.rel = Some(d.rel);
                row.log10 = Some(d.log10);
                row.delta1 = Some(d.delta1);
                row.delta2 = Some(d.delta2);
                row.delta3 = Some(d.delta3);
            }
            Metrics::Normals(n) => {
                row.mean_deg = Some(n.mean_deg);
                row.median_deg = Some(n.median_deg);
                row.pct_11_25 = Some(n.pct_11_25);
                row.pct_22_5 = Some(n.pct_22_5);
                row.pct_30 = Some(n.pct_30);
            }
            Metrics::Accuracy { accuracy } => row.accuracy = Some(accuracy),
        }
        row
    }
}

pub fn write_reports_csv(path: &Path, reports: &[MetricReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in reports {
        w.serialize(CsvRow::from(r))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_reports_json(path: &Path, reports: &[MetricReport]) -> Result<()> {
    let text = serde_json::to_string_pretty(reports).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

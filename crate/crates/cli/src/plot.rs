//! Plot-ready TSV from experiment reports and training logs.
//!
//! A report CSV becomes `<stem>.plot.tsv` with one line per (condition,
//! metric): the mean and standard deviation over seed rows, or the stored
//! mean row when no seed rows exist. A training log becomes one
//! `<stem>.<split>.tsv` per split.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use echolab::{Error, Result};

const ID_COLUMNS: [&str; 5] = ["task", "split", "condition", "seed", "samples"];

pub fn emit(report: &Path, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut rdr = csv::Reader::from_path(report)?;
    let headers = rdr.headers()?.clone();
    let rows: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let stem = report
        .file_stem()
        .map_or("report".into(), |s| s.to_string_lossy().into_owned());
    let col = |name: &str| headers.iter().position(|h| h == name);
    if let (Some(epoch), Some(split), Some(loss), Some(metric)) =
        (col("epoch"), col("split"), col("loss"), col("metric"))
    {
        let mut by_split: BTreeMap<String, String> = BTreeMap::new();
        for r in &rows {
            let text = by_split
                .entry(r[split].to_string())
                .or_insert_with(|| "epoch\tloss\tmetric\n".to_string());
            let m = if r[metric].is_empty() { "nan" } else { &r[metric] };
            text.push_str(&format!("{}\t{}\t{}\n", &r[epoch], &r[loss], m));
        }
        let mut out = Vec::new();
        for (s, text) in by_split {
            let path = dir.join(format!("{stem}.{s}.tsv"));
            fs::write(&path, text).map_err(|e| io(&path, e))?;
            out.push(path);
        }
        return Ok(out);
    }
    let (Some(cond), Some(seed)) = (col("condition"), col("seed")) else {
        return Err(Error::Config(format!(
            "{}: neither a report (condition, seed, ...) nor a training log (epoch, split, loss, metric)",
            report.display()
        )));
    };
    let metrics: Vec<(usize, &str)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| !ID_COLUMNS.contains(h))
        .collect();
    let mut order: Vec<String> = Vec::new();
    let mut seeded: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    let mut means: BTreeMap<(String, usize), f64> = BTreeMap::new();
    for r in &rows {
        let c = r[cond].to_string();
        if !order.contains(&c) {
            order.push(c.clone());
        }
        for &(i, _) in &metrics {
            let Ok(v) = r[i].parse::<f64>() else { continue };
            if &r[seed] == "mean" {
                means.insert((c.clone(), i), v);
            } else {
                seeded.entry((c.clone(), i)).or_default().push(v);
            }
        }
    }
    let mut text = String::from("condition\tmetric\tmean\tstd\tn\n");
    for c in &order {
        for &(i, name) in &metrics {
            let key = (c.clone(), i);
            let (mean, std, n) = match (seeded.get(&key), means.get(&key)) {
                (Some(v), _) => {
                    let n = v.len() as f64;
                    let m = v.iter().sum::<f64>() / n;
                    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
                    (m, var.sqrt(), v.len())
                }
                (None, Some(&m)) => (m, 0.0, 1),
                (None, None) => continue,
            };
            text.push_str(&format!("{c}\t{name}\t{mean}\t{std}\t{n}\n"));
        }
    }
    let path = dir.join(format!("{stem}.plot.tsv"));
    fs::write(&path, text).map_err(|e| io(&path, e))?;
    Ok(vec![path])
}

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

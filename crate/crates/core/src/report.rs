//! Cross-seed aggregation of metric streams into mean and 5%/95% bands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cmdp::MetricsReport;
use crate::error::{Error, Result};

/// One row of a plot-data file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub step: u64,
    pub mean: f64,
    pub p5: f64,
    pub p95: f64,
}

/// Bands per metric name, rows ordered by step.
pub type Aggregate = BTreeMap<String, Vec<Band>>;

/// Flattened numeric fields of one JSON-lines record, keyed by metric name.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub step: u64,
    pub values: BTreeMap<String, f64>,
}

const STEP_KEYS: [&str; 2] = ["episode", "update"];

/// Parses one JSON object. Numbers keep their key, arrays expand to `key_i`,
/// the step comes from `episode` or `update` and falls back to `index`.
pub fn parse_record(line: &str, index: u64) -> Result<Record> {
    let Value::Object(map) = serde_json::from_str::<Value>(line)? else {
        return Err(Error::invalid(format!("metrics line {index} is not a JSON object")));
    };
    let step = STEP_KEYS.iter().find_map(|k| map.get(*k).and_then(Value::as_u64)).unwrap_or(index);
    let mut values = BTreeMap::new();
    for (k, v) in &map {
        if STEP_KEYS.contains(&k.as_str()) {
            continue;
        }
        match v {
            Value::Number(n) => {
                values.insert(k.clone(), n.as_f64().unwrap_or(f64::NAN));
            }
            Value::Array(items) => {
                for (i, x) in items.iter().enumerate() {
                    if let Some(x) = x.as_f64() {
                        values.insert(format!("{k}_{i}"), x);
                    }
                }
            }
            _ => {}
        }
    }
    Ok(Record { step, values })
}

pub fn parse_stream(text: &str) -> Result<Vec<Record>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| parse_record(l, i as u64))
        .collect()
}

pub fn read_stream(path: &Path) -> Result<Vec<Record>> {
    parse_stream(&fs::read_to_string(path)?)
}

/// Percentile of sorted data with linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Mean and 5%/95% percentiles of `values`, which must be non-empty.
pub fn band(step: u64, values: &[f64]) -> Band {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Band { step, mean, p5: percentile(&sorted, 0.05), p95: percentile(&sorted, 0.95) }
}

/// Aggregates one stream per seed. A step's band uses every seed that logged it.
pub fn aggregate(streams: &[Vec<Record>]) -> Result<Aggregate> {
    let mut grouped: BTreeMap<String, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for stream in streams {
        for r in stream {
            for (k, &v) in &r.values {
                grouped.entry(k.clone()).or_default().entry(r.step).or_default().push(v);
            }
        }
    }
    if grouped.is_empty() {
        return Err(Error::invalid("no logged metrics to aggregate"));
    }
    Ok(grouped
        .into_iter()
        .map(|(k, steps)| (k, steps.into_iter().map(|(s, v)| band(s, &v)).collect()))
        .collect())
}

/// Writes `{dir}/{metric}.csv` with columns `step, mean, p5, p95`.
pub fn emit_plot_data(agg: &Aggregate, dir: &Path) -> Result<Vec<PathBuf>> {
    if agg.values().all(Vec::is_empty) {
        return Err(Error::invalid("empty metrics stream"));
    }
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for (metric, rows) in agg {
        let path = dir.join(format!("{metric}.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(csv_error)?;
        for row in rows {
            w.serialize(row).map_err(csv_error)?;
        }
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn read_plot_data(path: &Path) -> Result<Vec<Band>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    r.deserialize().map(|row| row.map_err(csv_error)).collect()
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::invalid(format!("csv: {other:?}")),
    }
}

/// Final scores summarized across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub seeds: usize,
    #[serde(rename = "J")]
    pub j: Band,
    #[serde(rename = "Jc")]
    pub jc: Vec<Band>,
    pub rho_c: Band,
}

pub fn summarize_scores(scores: &[MetricsReport]) -> Result<ScoreSummary> {
    let first = scores.first().ok_or_else(|| Error::invalid("no score files to summarize"))?;
    let nc = first.jc.len();
    if scores.iter().any(|s| s.jc.len() != nc) {
        return Err(Error::Shape("score files disagree on the number of constraints".into()));
    }
    let col = |f: &dyn Fn(&MetricsReport) -> f64| band(0, &scores.iter().map(f).collect::<Vec<_>>());
    Ok(ScoreSummary {
        seeds: scores.len(),
        j: col(&|s| s.j),
        jc: (0..nc).map(|i| col(&|s| s.jc[i])).collect(),
        rho_c: col(&|s| s.rho_c),
    })
}

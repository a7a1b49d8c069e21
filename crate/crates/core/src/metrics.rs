//! Evaluation metrics and result files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{EpisodeResult, InteractionRecord, OracleTrace};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub const RESULTS_CSV_HEADER: &str = "run,model,t,consumer,provider,outcome,cum_reward";
pub const SALES_CSV_HEADER: &str = "t,consumer,provider,outcome,model,run";

/// Prefix sums of the outcomes.
pub fn cumulative_reward(outcomes: &[u8]) -> Vec<u64> {
    outcomes
        .iter()
        .scan(0u64, |acc, &o| {
            *acc += u64::from(o);
            Some(*acc)
        })
        .collect()
}

/// Instantaneous regret per interaction: best available p minus the p of
/// the chosen provider. A skipped interaction is charged the best p among
/// all active providers.
pub fn regret(records: &[InteractionRecord], oracle: &OracleTrace) -> Result<Vec<f64>> {
    records
        .iter()
        .map(|r| {
            let k = (r.t as usize)
                .checked_sub(1)
                .ok_or_else(|| Error::Data("interaction t = 0".into()))?;
            let missing = || Error::Data(format!("no oracle entry for t = {}", r.t));
            let quality = oracle.quality.get(k).ok_or_else(missing)?;
            let pool = match r.provider {
                Some(_) => &oracle.available,
                None => &oracle.active,
            };
            let pool = pool.get(k).ok_or_else(missing)?;
            let p = |j: usize| quality.get(j).copied().ok_or_else(missing);
            let mut best = 0.0f64;
            for &j in pool {
                best = best.max(p(j)?);
            }
            let got = match r.provider {
                Some(j) => p(j)?,
                None => 0.0,
            };
            Ok(best - got)
        })
        .collect()
}

pub fn cumulative_regret(regret: &[f64]) -> Vec<f64> {
    regret
        .iter()
        .scan(0.0, |acc, &r| {
            *acc += r;
            Some(*acc)
        })
        .collect()
}

pub fn rmse(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    if actual.len() != predicted.len() {
        return Err(Error::Data(format!(
            "rmse: {} actual vs {} predicted ratings",
            actual.len(),
            predicted.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::Data("rmse of no ratings".into()));
    }
    let sum: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| (a - p).powi(2))
        .sum();
    Ok((sum / actual.len() as f64).sqrt())
}

pub fn accuracy(rmse: f64) -> Result<f64> {
    if !(rmse >= 0.0) {
        return Err(Error::Parameter(format!("rmse must be >= 0, got {rmse}")));
    }
    Ok(100.0 / (1.0 + rmse))
}

/// Streaming RMSE over consumed predictions.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningRmse {
    sum_sq: f64,
    n: u64,
}

impl RunningRmse {
    pub fn push(&mut self, actual: f64, predicted: f64) {
        self.sum_sq += (actual - predicted).powi(2);
        self.n += 1;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    /// 0 before the first sample.
    pub fn value(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.sum_sq / self.n as f64).sqrt()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub reward_series: Vec<u8>,
    pub cumulative_reward: Vec<u64>,
    /// Empty when the episode kept no oracle trace.
    pub regret_series: Vec<f64>,
}

impl RunMetrics {
    pub fn of(result: &EpisodeResult) -> Result<Self> {
        let regret_series = match &result.oracle {
            Some(o) => regret(&result.records, o)?,
            None => Vec::new(),
        };
        Ok(RunMetrics {
            cumulative_reward: cumulative_reward(&result.rewards),
            reward_series: result.rewards.clone(),
            regret_series,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Parameter(format!(
                "unsupported format {other:?} (expected csv or json)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsDocument {
    pub schema_version: u32,
    pub results: Vec<EpisodeResult>,
}

pub fn write_csv<W: Write>(results: &[EpisodeResult], out: W) -> csv::Result<()> {
    write_tagged_csv(&[], &[(Vec::new(), results)], out)
}

/// The results CSV with one leading column per key in `keys`; each group
/// carries its values for those keys.
pub fn write_tagged_csv<W: Write>(
    keys: &[String],
    groups: &[(Vec<String>, &[EpisodeResult])],
    out: W,
) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let header: Vec<&str> = keys
        .iter()
        .map(String::as_str)
        .chain(RESULTS_CSV_HEADER.split(','))
        .collect();
    w.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for (tags, results) in groups {
        for res in *results {
            let mut cum = 0u64;
            for r in &res.records {
                cum += u64::from(r.outcome);
                row.clear();
                row.extend(tags.iter().cloned());
                row.extend([
                    res.run.to_string(),
                    res.model.clone(),
                    r.t.to_string(),
                    (r.consumer + 1).to_string(),
                    r.provider.map(|j| (j + 1).to_string()).unwrap_or_default(),
                    r.outcome.to_string(),
                    cum.to_string(),
                ]);
                w.write_record(&row)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub params: BTreeMap<String, serde_json::Value>,
    pub results: Vec<EpisodeResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepDocument {
    pub schema_version: u32,
    pub cells: Vec<SweepCell>,
}

/// One row per completed sale.
pub fn write_sales_csv<W: Write>(results: &[EpisodeResult], out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(SALES_CSV_HEADER.split(','))?;
    for res in results {
        for s in res.sales() {
            w.write_record([
                s.t.to_string(),
                (s.consumer + 1).to_string(),
                (s.provider + 1).to_string(),
                s.outcome.to_string(),
                res.model.clone(),
                res.run.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<W: Write>(results: &[EpisodeResult], mut out: W) -> serde_json::Result<()> {
    let doc = ResultsDocument {
        schema_version: SCHEMA_VERSION,
        results: results.to_vec(),
    };
    serde_json::to_writer_pretty(&mut out, &doc)?;
    out.write_all(b"\n").map_err(serde_json::Error::io)
}

/// Writes `results` to `out`. `path` only labels errors.
pub fn write_results_to<W: Write>(
    results: &[EpisodeResult],
    out: W,
    format: Format,
    path: &Path,
) -> Result<()> {
    match format {
        Format::Csv => write_csv(results, out).map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        }),
        Format::Json => write_json(results, out).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        }),
    }
}

pub fn write_results(results: &[EpisodeResult], path: &Path, format: &str) -> Result<()> {
    let format: Format = format.parse()?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_results_to(results, &mut out, format, path)?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_results_from<R: Read>(input: R, path: &Path) -> Result<Vec<EpisodeResult>> {
    let doc: ResultsDocument = serde_json::from_reader(input).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(Error::Schema(format!(
            "{}: schema_version {} (expected {SCHEMA_VERSION})",
            path.display(),
            doc.schema_version
        )));
    }
    Ok(doc.results)
}

pub fn read_results(path: &Path) -> Result<Vec<EpisodeResult>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_results_from(BufReader::new(file), path)
}

use serde::{Deserialize, Serialize};

use super::Domain;
use crate::ddpg::RunLog;
use crate::error::{Error, Result};

/// Per-episode mean reward per step averaged over runs, with standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateCurve {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub runs: usize,
}

impl AggregateCurve {
    pub fn episodes(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and standard error of the mean (`0` for a single value).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn aggregate(logs: &[RunLog]) -> Result<AggregateCurve> {
    let first = logs
        .first()
        .ok_or_else(|| Error::Aggregation("no run logs".into()))?;
    let episodes = first.episodes.len();
    if logs.iter().any(|l| l.episodes.len() != episodes) {
        return Err(Error::Aggregation("run logs differ in episode count".into()));
    }
    let (mean, stderr) = (0..episodes)
        .map(|i| {
            let xs: Vec<f64> = logs.iter().map(|l| l.episodes[i].mean_reward_per_step).collect();
            mean_stderr(&xs)
        })
        .unzip();
    Ok(AggregateCurve {
        mean,
        stderr,
        runs: logs.len(),
    })
}

/// Inclusive 1-based episode range summed by the Evaluate measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalWindow {
    pub first: usize,
    pub last: usize,
}

impl EvalWindow {
    pub fn for_domain(domain: Domain) -> Self {
        match domain {
            Domain::PdeModel => EvalWindow {
                first: 180,
                last: 200,
            },
            Domain::HeatInvader => EvalWindow {
                first: 150,
                last: 200,
            },
        }
    }

    /// The domain window stretched onto a run of `episodes` episodes.
    pub fn scaled(domain: Domain, episodes: usize) -> Self {
        let w = Self::for_domain(domain);
        if episodes == w.last {
            return w;
        }
        let first = ((w.first as f64) * episodes as f64 / w.last as f64).round() as usize;
        EvalWindow {
            first: first.clamp(1, episodes),
            last: episodes,
        }
    }

    pub fn len(&self) -> usize {
        self.last + 1 - self.first
    }

    pub fn is_empty(&self) -> bool {
        self.last < self.first
    }

    /// `sum_{i=first}^{last} values[i - 1]`.
    pub fn sum(&self, values: &[f64]) -> Result<f64> {
        if self.first == 0 || self.last < self.first || self.last > values.len() {
            return Err(Error::Range(format!(
                "window {}..={} needs {} episodes, curve has {}",
                self.first,
                self.last,
                self.last,
                values.len()
            )));
        }
        Ok(values[self.first - 1..self.last].iter().sum())
    }
}

/// Evaluate with the standard 200-episode window for `domain`.
pub fn evaluate_window(curve: &AggregateCurve, domain: Domain) -> Result<f64> {
    EvalWindow::for_domain(domain).sum(&curve.mean)
}

/// Mean and standard error over runs of each run's windowed sum.
pub fn evaluate_runs(logs: &[RunLog], window: EvalWindow) -> Result<(f64, f64)> {
    if logs.is_empty() {
        return Err(Error::Aggregation("no run logs".into()));
    }
    let per_run = logs
        .iter()
        .map(|l| window.sum(&l.mean_rewards()))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_stderr(&per_run))
}

#[derive(Debug, Serialize, Deserialize)]
struct CurveRow {
    label: String,
    episode: usize,
    mean_reward: f64,
    stderr: f64,
    runs: usize,
}

/// Labeled curves as CSV: `label,episode,mean_reward,stderr,runs`.
pub fn curves_to_csv(curves: &[(String, AggregateCurve)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (label, c) in curves {
        for (i, (m, s)) in c.mean.iter().zip(&c.stderr).enumerate() {
            w.serialize(CurveRow {
                label: label.clone(),
                episode: i + 1,
                mean_reward: *m,
                stderr: *s,
                runs: c.runs,
            })
            .map_err(|e| Error::Parse(e.to_string()))?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

pub fn curves_from_csv(text: &str) -> Result<Vec<(String, AggregateCurve)>> {
    let mut out: Vec<(String, AggregateCurve)> = Vec::new();
    for row in csv::Reader::from_reader(text.as_bytes()).deserialize::<CurveRow>() {
        let row = row.map_err(|e| Error::Parse(e.to_string()))?;
        let idx = match out.iter().position(|(l, _)| *l == row.label) {
            Some(i) => i,
            None => {
                out.push((
                    row.label.clone(),
                    AggregateCurve {
                        mean: vec![],
                        stderr: vec![],
                        runs: row.runs,
                    },
                ));
                out.len() - 1
            }
        };
        let c = &mut out[idx].1;
        if row.episode != c.mean.len() + 1 {
            return Err(Error::Parse(format!(
                "curve {:?}: episode {} out of order",
                row.label, row.episode
            )));
        }
        c.mean.push(row.mean_reward);
        c.stderr.push(row.stderr);
    }
    Ok(out)
}

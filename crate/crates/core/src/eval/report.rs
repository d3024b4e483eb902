use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::nard_exp::NardComparison;
use super::EvalError;

/// Everything an experiment run produced, with the parameters needed to
/// reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub seed: u64,
    pub parameters: Value,
    /// How `aggregate` was computed from the trials, e.g. "median".
    pub aggregation: String,
    pub trials: Vec<Value>,
    pub aggregate: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curves: Option<NardComparison>,
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

impl ExperimentReport {
    /// One record per line: parameters, each trial, then the aggregate.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), EvalError> {
        let mut line = |v: Value| -> Result<(), EvalError> {
            serde_json::to_writer(&mut out, &v).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
            Ok(())
        };
        line(json!({
            "record": "parameters",
            "experiment": self.experiment,
            "seed": self.seed,
            "parameters": self.parameters,
        }))?;
        for (i, t) in self.trials.iter().enumerate() {
            line(json!({ "record": "trial", "index": i, "metrics": t }))?;
        }
        line(json!({
            "record": "aggregate",
            "aggregation": self.aggregation,
            "values": self.aggregate,
        }))
    }

    /// Aligned two-column text table of the aggregate values.
    pub fn summary_table(&self) -> String {
        let mut s = format!(
            "experiment  {}\nseed        {}\naggregation {}\ntrials      {}\n",
            self.experiment,
            self.seed,
            self.aggregation,
            self.trials.len()
        );
        if let Value::Object(map) = &self.aggregate {
            let width = map.keys().map(String::len).max().unwrap_or(0);
            for (k, v) in map {
                let _ = writeln!(s, "{k:<width$}  {v}");
            }
        }
        s
    }

    /// `strategy,t,fraction,mean,variance` rows, when the report has curves.
    pub fn curves_csv(&self) -> Option<String> {
        let c = self.curves.as_ref()?;
        let mut s = String::from("strategy,t,fraction,mean,variance\n");
        for (name, stats) in [("evaluate", &c.evaluate), ("baseline", &c.baseline)] {
            let span = stats.t.len().saturating_sub(1).max(1) as f64;
            for (i, &t) in stats.t.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{name},{t},{},{},{}",
                    i as f64 / span,
                    stats.mean[i],
                    stats.variance[i]
                );
            }
        }
        Some(s)
    }

    /// Writes `<stem>.jsonl`, `<stem>.summary.txt` and, for curve
    /// experiments, `<stem>.curves.csv`. `path` may carry any extension.
    pub fn write_files(&self, path: &std::path::Path) -> Result<Vec<std::path::PathBuf>, EvalError> {
        let stem = path.with_extension("");
        let with = |suffix: &str| {
            let mut p = stem.clone().into_os_string();
            p.push(suffix);
            std::path::PathBuf::from(p)
        };
        let mut written = Vec::new();
        let jsonl = with(".jsonl");
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        std::fs::write(&jsonl, buf)?;
        written.push(jsonl);
        let summary = with(".summary.txt");
        std::fs::write(&summary, self.summary_table())?;
        written.push(summary);
        if let Some(csv) = self.curves_csv() {
            let p = with(".curves.csv");
            std::fs::write(&p, csv)?;
            written.push(p);
        }
        Ok(written)
    }
}

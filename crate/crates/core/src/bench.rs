//! Wall-clock timing of method runs and the efficiency summary
//! (sum, mean, peak, seconds per 1k nodes / 1k edges).

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub method: String,
    pub run: usize,
    pub seconds: f64,
    pub nodes: usize,
    pub edges: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl TimingRecord {
    pub fn ok(&self) -> bool {
        self.failure.is_none()
    }
}

/// Runs `f` once and records its wall time. A failing thunk yields a
/// flagged record instead of an error.
pub fn time_run<T>(
    method: &str,
    run: usize,
    sizes: (usize, usize),
    f: impl FnOnce() -> Result<T>,
) -> TimingRecord {
    let start = Instant::now();
    let out = f();
    let seconds = start.elapsed().as_secs_f64();
    TimingRecord {
        method: method.to_string(),
        run,
        seconds,
        nodes: sizes.0,
        edges: sizes.1,
        failure: out.err().map(|e| e.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodEfficiency {
    pub method: String,
    pub runs: usize,
    pub failed: usize,
    pub sum: f64,
    pub mean: f64,
    pub peak: f64,
    /// Seconds per 1000 processed nodes; `None` when no nodes were processed.
    pub per_1k_nodes: Option<f64>,
    pub per_1k_edges: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    #[default]
    Seconds,
    Kiloseconds,
}

impl TimeUnit {
    pub fn factor(self) -> f64 {
        match self {
            TimeUnit::Seconds => 1.0,
            TimeUnit::Kiloseconds => 1e-3,
        }
    }

    pub fn suffix(self) -> &'static str {
        match self {
            TimeUnit::Seconds => "s",
            TimeUnit::Kiloseconds => "ks",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub methods: Vec<MethodEfficiency>,
}

pub const EFFICIENCY_COLUMNS: [&str; 5] = ["Sum", "Mean", "Peak", "/1kn", "/1ke"];

/// Aggregates successful runs per method, in first-seen method order.
pub fn summarize(records: &[TimingRecord]) -> Result<EfficiencyReport> {
    let mut order: Vec<&str> = Vec::new();
    for r in records {
        if !order.contains(&r.method.as_str()) {
            order.push(&r.method);
        }
    }
    let mut methods = Vec::with_capacity(order.len());
    for m in order {
        let all: Vec<&TimingRecord> = records.iter().filter(|r| r.method == m).collect();
        let ok: Vec<&TimingRecord> = all.iter().copied().filter(|r| r.ok()).collect();
        if ok.is_empty() {
            return Err(Error::NoRuns(m.to_string()));
        }
        let sum: f64 = ok.iter().map(|r| r.seconds).sum();
        let peak = ok.iter().map(|r| r.seconds).fold(0.0, f64::max);
        let nodes: usize = ok.iter().map(|r| r.nodes).sum();
        let edges: usize = ok.iter().map(|r| r.edges).sum();
        let rate = |n: usize| (n > 0).then(|| sum / (n as f64 / 1000.0));
        methods.push(MethodEfficiency {
            method: m.to_string(),
            runs: ok.len(),
            failed: all.len() - ok.len(),
            sum,
            mean: sum / ok.len() as f64,
            peak,
            per_1k_nodes: rate(nodes),
            per_1k_edges: rate(edges),
        });
    }
    Ok(EfficiencyReport { methods })
}

impl EfficiencyReport {
    /// Rows of `[Sum, Mean, Peak, /1kn, /1ke]` in the given unit.
    pub fn rows(&self, unit: TimeUnit) -> Vec<(String, [Option<f64>; 5])> {
        let k = unit.factor();
        self.methods
            .iter()
            .map(|m| {
                (
                    m.method.clone(),
                    [
                        Some(m.sum * k),
                        Some(m.mean * k),
                        Some(m.peak * k),
                        m.per_1k_nodes.map(|x| x * k),
                        m.per_1k_edges.map(|x| x * k),
                    ],
                )
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(m: &str, s: f64, nodes: usize, edges: usize) -> TimingRecord {
        TimingRecord {
            method: m.into(),
            run: 0,
            seconds: s,
            nodes,
            edges,
            failure: None,
        }
    }

    #[test]
    fn sleep_is_timed() {
        let r = time_run("sleep", 0, (3, 2), || {
            std::thread::sleep(std::time::Duration::from_millis(100));
            Ok(())
        });
        assert!(r.seconds >= 0.1 && r.seconds < 0.6, "{}", r.seconds);
        assert_eq!((r.nodes, r.edges), (3, 2));
        assert!(r.ok());
    }

    #[test]
    fn zero_and_failed() {
        let r = time_run("z", 0, (0, 0), || Ok(()));
        assert_eq!((r.nodes, r.edges), (0, 0));
        let f = time_run::<()>("f", 1, (1, 1), || Err(Error::Degenerate("boom".into())));
        assert!(!f.ok());
        let rep = summarize(&[f.clone(), rec("f", 2.0, 10, 10)]).unwrap();
        assert_eq!((rep.methods[0].runs, rep.methods[0].failed), (1, 1));
        assert!(matches!(summarize(&[f]), Err(Error::NoRuns(_))));
    }

    #[test]
    fn arithmetic() {
        let rep = summarize(&[
            rec("a", 1.0, 1000, 500),
            rec("a", 3.0, 1000, 1500),
            rec("b", 2.5, 0, 0),
        ])
        .unwrap();
        let a = &rep.methods[0];
        assert_eq!((a.sum, a.mean, a.peak), (4.0, 2.0, 3.0));
        assert_eq!(a.per_1k_nodes, Some(2.0));
        assert_eq!(a.per_1k_edges, Some(2.0));
        let b = &rep.methods[1];
        assert_eq!((b.sum, b.mean, b.peak), (2.5, 2.5, 2.5));
        assert_eq!(b.per_1k_nodes, None);
        let ks = rep.rows(TimeUnit::Kiloseconds);
        assert_eq!(ks[0].1[0], Some(0.004));
    }
}

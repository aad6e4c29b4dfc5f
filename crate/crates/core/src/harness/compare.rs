//! Side-by-side comparison of two runs of one config.

use std::collections::BTreeSet;
use std::fmt::Write;

use super::artifacts::LoadedRun;
use crate::telemetry::Summary;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CompareError {
    #[error("config hash mismatch: {a} vs {b}")]
    ConfigMismatch { a: String, b: String },
    #[error("seed mismatch: {a} vs {b}")]
    SeedMismatch { a: u64, b: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub a: f64,
    pub b: f64,
}

impl MetricRow {
    pub fn delta(&self) -> f64 {
        self.b - self.a
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
    pub mode_a: String,
    pub mode_b: String,
    pub rows: Vec<MetricRow>,
}

fn total_bytes(s: &Summary, class: &str) -> u64 {
    s.link_bytes.values().filter_map(|m| m.get(class)).sum()
}

fn metrics(s: &Summary, classes: &BTreeSet<String>, links: &BTreeSet<String>) -> Vec<(String, f64)> {
    let mut m = Vec::new();
    for c in classes {
        m.push((format!("bytes.{c}"), total_bytes(s, c) as f64));
    }
    for l in links {
        let v: u64 = s.link_bytes.get(l).map_or(0, |m| m.values().sum());
        m.push((format!("link.{l}"), v as f64));
    }
    for c in ["chunk", "playlist"] {
        if let Some(r) = s.merge_ratio(c) {
            m.push((format!("merge_ratio.{c}"), r));
        }
    }
    let cl = s.clients.values();
    m.push(("hls.chunks".into(), cl.clone().map(|c| c.chunks).sum::<u64>() as f64));
    m.push(("hls.stalls".into(), s.total_stalls() as f64));
    m.push(("hls.stall_us".into(), cl.clone().map(|c| c.stall_us).sum::<u64>() as f64));
    m.push(("hls.longest_stall_us".into(), cl.clone().map(|c| c.longest_stall_us).max().unwrap_or(0) as f64));
    m.push(("hls.downshifts".into(), cl.clone().map(|c| c.downshifts).sum::<u64>() as f64));
    m.push(("hls.timeouts".into(), cl.map(|c| c.timeouts).sum::<u64>() as f64));
    let stbs = s.stbs.values();
    m.push(("iptv.packets".into(), stbs.clone().map(|b| b.packets).sum::<u64>() as f64));
    m.push(("iptv.disruptions".into(), stbs.clone().map(|b| b.disruptions.len() as u64).sum::<u64>() as f64));
    m.push((
        "iptv.longest_disruption_us".into(),
        stbs.clone().map(|b| b.longest_disruption_us()).max().unwrap_or(0) as f64,
    ));
    let acq: Vec<u64> = stbs.flat_map(|b| b.acquisitions.iter().copied()).collect();
    if !acq.is_empty() {
        m.push(("iptv.mean_acquisition_us".into(), acq.iter().sum::<u64>() as f64 / acq.len() as f64));
    }
    let c = &s.conservation;
    m.push(("bytes.injected".into(), c.injected as f64));
    m.push(("bytes.delivered".into(), c.delivered as f64));
    m.push(("bytes.dropped".into(), c.dropped as f64));
    m
}

/// Pairs the metrics of two runs. Refuses runs of different configs or seeds.
pub fn compare(a: &LoadedRun, b: &LoadedRun) -> Result<ComparisonReport, CompareError> {
    if a.meta.config_hash != b.meta.config_hash {
        return Err(CompareError::ConfigMismatch {
            a: a.meta.config_hash.clone(),
            b: b.meta.config_hash.clone(),
        });
    }
    if a.meta.seed != b.meta.seed {
        return Err(CompareError::SeedMismatch { a: a.meta.seed, b: b.meta.seed });
    }
    Ok(compare_summaries(&a.summary, &b.summary))
}

/// Pairs the metrics of two summaries without identity checks.
pub fn compare_summaries(a: &Summary, b: &Summary) -> ComparisonReport {
    let classes: BTreeSet<String> = a
        .link_bytes
        .values()
        .chain(b.link_bytes.values())
        .flat_map(|m| m.keys().cloned())
        .collect();
    let links: BTreeSet<String> = a.link_bytes.keys().chain(b.link_bytes.keys()).cloned().collect();
    let ma = metrics(a, &classes, &links);
    let mb = metrics(b, &classes, &links);
    let mut rows = Vec::new();
    for (name, va) in &ma {
        let vb = mb.iter().find(|(n, _)| n == name).map_or(0.0, |(_, v)| *v);
        rows.push(MetricRow { metric: name.clone(), a: *va, b: vb });
    }
    for (name, vb) in &mb {
        if !ma.iter().any(|(n, _)| n == name) {
            rows.push(MetricRow { metric: name.clone(), a: 0.0, b: *vb });
        }
    }
    ComparisonReport {
        scenario: a.scenario.clone(),
        config_hash: a.config_hash.clone(),
        seed: a.seed,
        mode_a: a.mode.clone(),
        mode_b: b.mode.clone(),
        rows,
    }
}

impl ComparisonReport {
    pub fn row(&self, metric: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }

    pub fn all_deltas_zero(&self) -> bool {
        self.rows.iter().all(|r| r.delta() == 0.0)
    }

    /// Percent of `class` bytes that run `a` saves relative to run `b`.
    pub fn bandwidth_saving_pct(&self, class: &str) -> Option<f64> {
        let r = self.row(&format!("bytes.{class}"))?;
        (r.b > 0.0).then(|| 100.0 * (1.0 - r.a / r.b))
    }

    /// Longest IPTV disruption in `b` over that in `a`.
    pub fn disruption_ratio(&self) -> Option<f64> {
        let r = self.row("iptv.longest_disruption_us")?;
        (r.a > 0.0).then(|| r.b / r.a)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario     {}", self.scenario);
        let _ = writeln!(s, "config hash  {}", self.config_hash);
        let _ = writeln!(s, "seed         {}", self.seed);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<44} {:>16} {:>16} {:>16}", "metric", self.mode_a, self.mode_b, "delta");
        for r in &self.rows {
            let _ = writeln!(s, "{:<44} {:>16} {:>16} {:>16}", r.metric, fmt(r.a), fmt(r.b), fmt(r.delta()));
        }
        let _ = writeln!(s);
        for c in ["chunk", "playlist", "iptv"] {
            if let Some(p) = self.bandwidth_saving_pct(c) {
                let _ = writeln!(s, "{c} bytes saved by {} vs {}: {p:.1}%", self.mode_a, self.mode_b);
            }
        }
        if let Some(r) = self.disruption_ratio() {
            let _ = writeln!(s, "longest disruption {} / {}: {r:.1}", self.mode_b, self.mode_a);
        }
        s
    }
}

fn fmt(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.3}")
    }
}

//! Three interactive operations over the simulator, exported to JavaScript.
//! Each returns a JSON string; the plain functions are usable natively.

use pointsim::fid::{assign_link_ids, encode_path, false_positive_rate, should_forward, FidConfig};
use pointsim::harness::{run_scenario, scenarios, Mode, RunOptions, ScenarioConfig};
use pointsim::simkernel::{substream, VirtualTime};
use pointsim::telemetry::Event;
use rand::seq::index::sample;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct Lane {
    pub stb: String,
    /// (start, end) of each delivery gap, in ms.
    pub gaps: Vec<(f64, f64)>,
    pub longest_ms: f64,
}

#[derive(Debug, Serialize)]
pub struct Timeline {
    pub mode: String,
    pub duration_ms: f64,
    /// (time ms, link, up)
    pub link_events: Vec<(f64, String, bool)>,
    pub lanes: Vec<Lane>,
}

fn shipped(name: &str) -> Result<ScenarioConfig, String> {
    scenarios::shipped(name)
        .ok_or_else(|| format!("no scenario {name}"))?
        .map_err(|e| e.to_string())
}

fn ms(t: VirtualTime) -> f64 {
    t.as_micros() as f64 / 1000.0
}

/// Runs the IPTV failover scenario and returns per-set-top-box delivery gaps.
pub fn failover_timeline(mode: &str, detection_ms: u64, reconvergence_ms: u64) -> Result<Timeline, String> {
    let mut cfg = shipped("iptv_failover")?;
    cfg.params.detection_delay_ms = detection_ms;
    cfg.params.reconvergence_delay_ms = reconvergence_ms;
    cfg.validate().map_err(|e| e.to_string())?;
    let mode: Mode = mode.parse().map_err(|_| format!("bad mode {mode}"))?;
    let out = run_scenario(&cfg, mode, RunOptions::default()).map_err(|e| e.to_string())?;
    let link_events = out
        .artifacts
        .events
        .iter()
        .filter_map(|r| match r.event {
            Event::LinkState { up } if !r.element.contains(':') => Some((ms(r.t), r.element.clone(), up)),
            _ => None,
        })
        .collect();
    let lanes = out
        .summary
        .stbs
        .iter()
        .map(|(name, s)| Lane {
            stb: name.clone(),
            gaps: s.disruptions.iter().map(|(a, b)| (ms(*a), ms(*b))).collect(),
            longest_ms: s.longest_disruption_us() as f64 / 1000.0,
        })
        .collect();
    Ok(Timeline {
        mode: mode.as_str().into(),
        duration_ms: cfg.duration_ms as f64,
        link_events,
        lanes,
    })
}

#[derive(Debug, Serialize)]
pub struct FpPoint {
    pub n: usize,
    pub measured: f64,
    pub analytic: f64,
}

/// Measured false-positive rate of `m`-bit, `k`-hash link ids when `n`
/// random links are encoded, against the analytic estimate.
pub fn fp_curve(m: usize, k: usize, max_n: usize, rounds: usize, seed: u64) -> Result<Vec<FpPoint>, String> {
    const PROBES: usize = 32;
    if rounds == 0 || max_n == 0 {
        return Err("rounds and max_n must be positive".into());
    }
    let cfg = FidConfig::bloom(m, k);
    let mut rng = substream(seed, "demo.fp");
    let mut points = Vec::new();
    for n in 1..=max_n {
        let mut fp = 0usize;
        for r in 0..rounds {
            let ids = assign_link_ids(n + PROBES, &cfg, seed ^ ((n * rounds + r) as u64))
                .map_err(|e| e.to_string())?;
            let members = sample(&mut rng, n + PROBES, n).into_vec();
            let fid = encode_path(m, members.iter().map(|i| &ids[*i])).map_err(|e| e.to_string())?;
            fp += (0..n + PROBES)
                .filter(|i| !members.contains(i) && should_forward(&fid, &ids[*i]))
                .count();
        }
        points.push(FpPoint {
            n,
            measured: fp as f64 / (rounds * PROBES) as f64,
            analytic: false_positive_rate(m, k, n),
        });
    }
    Ok(points)
}

#[derive(Debug, Serialize)]
pub struct WindowPoint {
    pub window_ms: u64,
    /// Chunk responses the origin sent.
    pub origin_responses: u64,
    pub client_deliveries: u64,
    pub merge_ratio: f64,
    pub trunk_chunk_bytes: u64,
    pub stalls: u64,
}

#[derive(Debug, Serialize)]
pub struct Sweep {
    pub points: Vec<WindowPoint>,
    pub ip_trunk_chunk_bytes: u64,
}

/// Coalescing-window sweep over the coincidental multicast scenario.
pub fn window_sweep(windows_ms: &[u64]) -> Result<Sweep, String> {
    let base = shipped("coincidental_multicast")?;
    let ip = run_scenario(&base, Mode::Ip, RunOptions::default()).map_err(|e| e.to_string())?;
    let mut points = Vec::new();
    for &w in windows_ms {
        let mut cfg = base.clone();
        cfg.params.coalescing_window_ms = w;
        cfg.validate().map_err(|e| e.to_string())?;
        let out = run_scenario(&cfg, Mode::Icn, RunOptions::default()).map_err(|e| e.to_string())?;
        let (deliveries, sent) = out.summary.merge.get("chunk").copied().unwrap_or((0, 0));
        points.push(WindowPoint {
            window_ms: w,
            origin_responses: sent,
            client_deliveries: deliveries,
            merge_ratio: out.summary.merge_ratio("chunk").unwrap_or(0.0),
            trunk_chunk_bytes: out.summary.bytes_on("trunk:", "chunk"),
            stalls: out.summary.total_stalls(),
        });
    }
    Ok(Sweep {
        points,
        ip_trunk_chunk_bytes: ip.summary.bytes_on("trunk:", "chunk"),
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = failoverTimeline)]
pub fn failover_timeline_js(mode: &str, detection_ms: u32, reconvergence_ms: u32) -> Result<String, JsError> {
    to_js(failover_timeline(mode, detection_ms.into(), reconvergence_ms.into()))
}

#[wasm_bindgen(js_name = fpCurve)]
pub fn fp_curve_js(m: u32, k: u32, max_n: u32, rounds: u32, seed: u32) -> Result<String, JsError> {
    to_js(fp_curve(m as usize, k as usize, max_n as usize, rounds as usize, seed.into()))
}

#[wasm_bindgen(js_name = windowSweep)]
pub fn window_sweep_js(windows_ms: Vec<u32>) -> Result<String, JsError> {
    let w: Vec<u64> = windows_ms.into_iter().map(u64::from).collect();
    to_js(window_sweep(&w))
}

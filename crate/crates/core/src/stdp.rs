//! Weight change `ΔW = η · S_pre · dV_post/dt` around a pre-synaptic spike.
//!
//! The post-synaptic voltage drifts linearly with slope `V̇` (plus optional
//! random-walk noise) and sits below threshold at the pre-synaptic spike,
//! `t = 0`. A rising voltage crosses threshold after the spike (`ΔT > 0`); a
//! falling one crossed it before (`ΔT < 0`), found by following the same
//! slope backwards. The update is evaluated at the pre-synaptic spike, so its
//! sign follows `V̇` and its size shrinks as `|ΔT|` grows.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::RandomSource;

#[derive(Debug, Clone, PartialEq)]
pub struct StdpConfig {
    /// Firing threshold.
    pub threshold: f64,
    /// Voltage at the pre-synaptic spike; must be below `threshold`.
    pub v0: f64,
    /// Slopes `V̇` to sweep (voltage per ms).
    pub drift_rates: Vec<f64>,
    /// Half-width of the observation window (ms).
    pub window: f64,
    /// Integration step (ms).
    pub dt: f64,
    /// Standard deviation of the voltage noise added each step.
    pub noise_std: f64,
    /// Proportionality constant `η`.
    pub learning_rate: f64,
    /// Noise repetitions averaged per drift rate (forced to 1 without noise).
    pub repetitions: usize,
}

impl Default for StdpConfig {
    fn default() -> Self {
        Self {
            threshold: 1.0,
            v0: 0.0,
            drift_rates: symmetric_log_rates(0.02, 1.0, 12),
            window: 50.0,
            dt: 0.1,
            noise_std: 0.0,
            learning_rate: 1.0,
            repetitions: 1,
        }
    }
}

/// `count` log-spaced magnitudes in `[lo, hi]`, mirrored to both signs and sorted.
pub fn symmetric_log_rates(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let mags: Vec<f64> = match count {
        0 => vec![],
        1 => vec![lo],
        _ => (0..count)
            .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (count - 1) as f64).exp())
            .collect(),
    };
    let mut rates: Vec<f64> = mags.iter().map(|m| -m).chain(mags.iter().copied()).collect();
    rates.sort_by(f64::total_cmp);
    rates
}

impl StdpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.v0 < self.threshold) {
            return Err(Error::invalid("initial voltage must be below the firing threshold"));
        }
        if !(self.window > 0.0) || !(self.dt > 0.0) {
            return Err(Error::invalid("window and dt must be positive"));
        }
        if self.drift_rates.is_empty() {
            return Err(Error::invalid("at least one drift rate is required"));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::invalid("voltage noise std must be >= 0"));
        }
        if self.repetitions == 0 {
            return Err(Error::invalid("at least one repetition is required"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StdpPoint {
    pub drift_rate: f64,
    /// Post minus pre spike time (ms), averaged over repetitions that crossed.
    pub delta_t: f64,
    pub delta_w: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StdpTrace {
    /// Sorted by `delta_t`.
    pub points: Vec<StdpPoint>,
    pub repetitions: usize,
    /// Drift rates that never reached threshold inside the window.
    pub dropped: Vec<f64>,
}

/// Time of the first threshold crossing walking away from `t = 0` in the
/// direction the voltage rises, linearly interpolated between steps.
fn crossing_time(cfg: &StdpConfig, rate: f64, rng: &mut RandomSource) -> Option<f64> {
    if rate == 0.0 {
        return None;
    }
    let direction = rate.signum();
    let steps = (cfg.window / cfg.dt + 1e-9).floor() as usize;
    let rise = rate.abs() * cfg.dt;
    let mut v = cfg.v0;
    for k in 1..=steps {
        let prev = v;
        v += rise;
        if cfg.noise_std > 0.0 {
            v += cfg.noise_std * rng.standard_normal();
        }
        if v >= cfg.threshold {
            let frac = if v > prev { (cfg.threshold - prev) / (v - prev) } else { 1.0 };
            return Some(direction * ((k - 1) as f64 + frac.clamp(0.0, 1.0)) * cfg.dt);
        }
    }
    None
}

pub fn simulate_stdp(cfg: &StdpConfig, rng: &RandomSource) -> Result<StdpTrace> {
    cfg.validate()?;
    let repetitions = if cfg.noise_std > 0.0 { cfg.repetitions } else { 1 };
    let results: Vec<(f64, Option<f64>)> = cfg
        .drift_rates
        .par_iter()
        .enumerate()
        .map(|(i, &rate)| {
            let base = rng.substream(i as u64);
            let times: Vec<f64> = (0..repetitions)
                .filter_map(|r| crossing_time(cfg, rate, &mut base.substream(r as u64)))
                .collect();
            let mean = (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64);
            (rate, mean)
        })
        .collect();

    let mut points = Vec::new();
    let mut dropped = Vec::new();
    for (rate, delta_t) in results {
        match delta_t {
            Some(delta_t) => points.push(StdpPoint {
                drift_rate: rate,
                delta_t,
                delta_w: cfg.learning_rate * rate,
            }),
            None => dropped.push(rate),
        }
    }
    points.sort_by(|a, b| a.delta_t.total_cmp(&b.delta_t));
    Ok(StdpTrace {
        points,
        repetitions,
        dropped,
    })
}

impl StdpTrace {
    pub const CSV_HEADER: &'static str = "delta_t_ms,delta_w";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for p in &self.points {
            out.push_str(&format!("{},{}\n", p.delta_t, p.delta_w));
        }
        out
    }
}

pub fn export_stdp_curve(trace: &StdpTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, trace.to_csv()).map_err(|e| Error::io(path, e))
}

/// Parses `delta_t_ms,delta_w` CSV back into `(ΔT, ΔW)` pairs.
pub fn parse_stdp_csv(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == StdpTrace::CSV_HEADER => {}
        other => {
            return Err(Error::parse(
                "header",
                format!("expected `{}`, found {:?}", StdpTrace::CSV_HEADER, other),
            ))
        }
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let (t, w) = line
                .split_once(',')
                .ok_or_else(|| Error::parse(format!("row {}", i + 1), "expected two columns"))?;
            let t = t.trim().parse().map_err(|_| Error::parse("delta_t_ms", t))?;
            let w = w.trim().parse().map_err(|_| Error::parse("delta_w", w))?;
            Ok((t, w))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise_free(rates: Vec<f64>) -> StdpConfig {
        StdpConfig {
            drift_rates: rates,
            ..StdpConfig::default()
        }
    }

    #[test]
    fn closed_form_crossings() {
        let trace = simulate_stdp(&noise_free(vec![0.5, -0.5]), &RandomSource::new(0)).unwrap();
        assert_eq!(trace.points.len(), 2);
        let (neg, pos) = (trace.points[0], trace.points[1]);
        assert!((pos.delta_t - 2.0).abs() < 1e-9 && (pos.delta_w - 0.5).abs() < 1e-15);
        assert!((neg.delta_t + 2.0).abs() < 1e-9 && (neg.delta_w + 0.5).abs() < 1e-15);
    }

    #[test]
    fn matches_closed_form_within_dt() {
        let cfg = StdpConfig::default();
        let trace = simulate_stdp(&cfg, &RandomSource::new(0)).unwrap();
        for p in &trace.points {
            let expected = (cfg.threshold - cfg.v0) / p.drift_rate;
            assert!((p.delta_t - expected).abs() <= cfg.dt, "{p:?}");
        }
    }

    #[test]
    fn slow_drifts_are_dropped() {
        let trace = simulate_stdp(&noise_free(vec![0.001, 0.0, -0.01, 0.3]), &RandomSource::new(0)).unwrap();
        assert_eq!(trace.points.len(), 1);
        assert_eq!(trace.dropped, vec![0.001, 0.0, -0.01]);
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = StdpConfig::default();
        cfg.v0 = 2.0;
        assert!(simulate_stdp(&cfg, &RandomSource::new(0)).is_err());
        let cfg = noise_free(vec![]);
        assert!(simulate_stdp(&cfg, &RandomSource::new(0)).is_err());
    }

    #[test]
    fn noisy_sweep_keeps_the_sign_law_and_is_reproducible() {
        let cfg = StdpConfig {
            noise_std: 0.05,
            repetitions: 50,
            ..StdpConfig::default()
        };
        let a = simulate_stdp(&cfg, &RandomSource::new(7)).unwrap();
        let b = simulate_stdp(&cfg, &RandomSource::new(7)).unwrap();
        assert_eq!(a, b);
        assert!(a.points.iter().all(|p| p.delta_t.signum() == p.delta_w.signum()));
    }

    #[test]
    fn csv_shapes_and_round_trip() {
        let empty = StdpTrace {
            points: vec![],
            repetitions: 1,
            dropped: vec![],
        };
        assert_eq!(empty.to_csv(), "delta_t_ms,delta_w\n");

        let trace = simulate_stdp(&noise_free(vec![0.3, -0.7, 0.9]), &RandomSource::new(0)).unwrap();
        let csv = trace.to_csv();
        assert_eq!(csv.lines().count(), 4);
        let parsed = parse_stdp_csv(&csv).unwrap();
        assert!(parsed.windows(2).all(|w| w[0].0 <= w[1].0));
        for (p, (t, w)) in trace.points.iter().zip(parsed) {
            assert_eq!((p.delta_t, p.delta_w), (t, w));
        }

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stdp.csv");
        export_stdp_curve(&trace, &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), csv);
        assert!(parse_stdp_csv("dt,dw\n").is_err());
    }
}

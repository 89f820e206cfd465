//! Metrics and report artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::controller::{EpisodeLog, StepRecord};
use crate::error::{Error, Result};

/// `Σ (y - ŷ)² / Σ y²`
pub fn nmse(predictions: &[f64], truth: &[f64]) -> Result<f64> {
    if predictions.len() != truth.len() || truth.is_empty() {
        return Err(Error::Contract(format!(
            "nmse needs equal non-empty lengths, got {} and {}",
            predictions.len(),
            truth.len()
        )));
    }
    let energy: f64 = truth.iter().map(|y| y * y).sum();
    if energy <= 0.0 {
        return Err(Error::UndefinedMetric("nmse of an all-zero truth".into()));
    }
    let sse: f64 = predictions
        .iter()
        .zip(truth)
        .map(|(p, y)| (y - p).powi(2))
        .sum();
    Ok(sse / energy)
}

/// Centered moving average of the per-episode total reward; the window is
/// truncated at both ends.
pub fn reward_curve(logs: &[EpisodeLog], window: usize) -> Vec<f64> {
    let totals: Vec<f64> = logs.iter().map(|l| l.total_reward).collect();
    smooth(&totals, window)
}

pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let left = (window - 1) / 2;
    let right = window / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(left);
            let hi = (i + right).min(values.len() - 1);
            values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandDominance {
    pub start: usize,
    pub end: usize,
    pub model: usize,
    pub model_name: String,
    pub share: f64,
    /// Normalized weight per model within the band.
    pub shares: Vec<f64>,
    pub steps: usize,
}

/// Dominant model per band of `band_size` time indices. Bands are aligned
/// to 1-based indices (1..=size, size+1..=2·size, …); empty bands are skipped.
pub fn band_dominance(steps: &[StepRecord], band_size: usize, names: &[String]) -> Vec<BandDominance> {
    let band_size = band_size.max(1);
    let mut bands: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for s in steps {
        let key = s.time_index.saturating_sub(1) / band_size;
        let entry = bands
            .entry(key)
            .or_insert_with(|| (vec![0.0; s.weights.len()], 0));
        for (acc, w) in entry.0.iter_mut().zip(s.weights.as_slice()) {
            *acc += w;
        }
        entry.1 += 1;
    }
    bands
        .into_iter()
        .map(|(key, (sums, count))| {
            let total: f64 = sums.iter().sum();
            let shares: Vec<f64> = sums.iter().map(|s| s / total).collect();
            let model = crate::combiner::argmax(&shares);
            BandDominance {
                start: key * band_size + 1,
                end: (key + 1) * band_size,
                model,
                model_name: names.get(model).cloned().unwrap_or_else(|| format!("model {}", model + 1)),
                share: shares[model],
                shares,
                steps: count,
            }
        })
        .collect()
}

/// NMSE of one strategy across seeds. Failed runs keep their error text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyScore {
    pub name: String,
    pub per_seed: Vec<Option<f64>>,
    pub errors: Vec<Option<String>>,
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl StrategyScore {
    pub fn from_results(name: &str, results: Vec<std::result::Result<f64, String>>) -> Self {
        let per_seed: Vec<Option<f64>> = results.iter().map(|r| r.as_ref().ok().copied()).collect();
        let errors = results.into_iter().map(|r| r.err()).collect();
        let ok: Vec<f64> = per_seed.iter().flatten().copied().collect();
        let (mean, min, max) = if ok.is_empty() {
            (None, None, None)
        } else {
            (
                Some(ok.iter().sum::<f64>() / ok.len() as f64),
                ok.iter().copied().reduce(f64::min),
                ok.iter().copied().reduce(f64::max),
            )
        };
        Self {
            name: name.to_string(),
            per_seed,
            errors,
            mean,
            min,
            max,
        }
    }

    pub fn failed(&self) -> bool {
        self.errors.iter().any(Option::is_some)
    }
}

/// Wall-clock seconds per weight computation (including its update), by strategy.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub seconds_per_step: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seeds: Vec<u64>,
    pub feedback: String,
    pub strategies: Vec<StrategyScore>,
    /// Total reward per training episode, one row per seed.
    pub episode_rewards: Vec<Vec<f64>>,
    pub smoothing_window: usize,
    pub band_size: usize,
    /// Dominant model per band for the first seed's controller.
    pub band_dominance: Vec<BandDominance>,
    /// Wall-clock; kept out of the JSON so reports are reproducible.
    #[serde(skip)]
    pub runtime_per_step: Timings,
}

impl EvalReport {
    pub fn score(&self, name: &str) -> Option<&StrategyScore> {
        self.strategies.iter().find(|s| s.name == name)
    }

    pub fn any_failed(&self) -> bool {
        self.strategies.iter().any(StrategyScore::failed)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::json("serializing report", e))
    }

    /// Aligned-column table of NMSE per strategy.
    pub fn to_text(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "failed".to_string(), |x| format!("{x:.4}"));
        let width = self
            .strategies
            .iter()
            .map(|s| s.name.len())
            .max()
            .unwrap_or(8)
            .max(8);
        let mut out = String::new();
        writeln!(out, "feedback: {}   seeds: {:?}", self.feedback, self.seeds).unwrap();
        writeln!(
            out,
            "{:<width$}  {:>10}  {:>10}  {:>10}",
            "strategy", "nmse mean", "min", "max"
        )
        .unwrap();
        writeln!(out, "{}", "-".repeat(width + 36)).unwrap();
        for s in &self.strategies {
            writeln!(
                out,
                "{:<width$}  {:>10}  {:>10}  {:>10}",
                s.name,
                fmt(s.mean),
                fmt(s.min),
                fmt(s.max)
            )
            .unwrap();
        }
        if !self.band_dominance.is_empty() {
            writeln!(out, "\ndominant model per band of {} samples:", self.band_size).unwrap();
            for b in &self.band_dominance {
                writeln!(
                    out,
                    "  {:>6}-{:<6} {:<width$} share {:.3}",
                    b.start, b.end, b.model_name, b.share
                )
                .unwrap();
            }
        }
        if !self.runtime_per_step.seconds_per_step.is_empty() {
            writeln!(out, "\nseconds per weight computation:").unwrap();
            for (name, secs) in &self.runtime_per_step.seconds_per_step {
                writeln!(out, "  {name:<width$} {secs:.3e}").unwrap();
            }
        }
        out
    }
}

/// A minimal SVG line chart.
pub fn line_chart_svg(title: &str, x_label: &str, lines: &[(String, Vec<(f64, f64)>)]) -> String {
    const W: f64 = 800.0;
    const H: f64 = 420.0;
    const PAD: f64 = 50.0;
    const COLORS: [&str; 8] = [
        "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
    ];
    let points = lines.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        W / 2.0,
        escape(title)
    )
    .unwrap();
    writeln!(
        svg,
        r#"<line x1="{PAD}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{0}" stroke="black"/>"#,
        H - PAD,
        W - PAD
    )
    .unwrap();
    for (v, y) in [(y0, sy(y0)), (y1, sy(y1))] {
        writeln!(
            svg,
            r#"<text x="{}" y="{y:.1}" text-anchor="end" font-family="sans-serif" font-size="11">{v:.3}</text>"#,
            PAD - 4.0
        )
        .unwrap();
    }
    for (v, x) in [(x0, sx(x0)), (x1, sx(x1))] {
        writeln!(
            svg,
            r#"<text x="{x:.1}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{v}</text>"#,
            H - PAD + 16.0
        )
        .unwrap();
    }
    writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
        W / 2.0,
        H - 10.0,
        escape(x_label)
    )
    .unwrap();
    for (k, (name, pts)) in lines.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        )
        .unwrap();
        writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="{color}">{}</text>"#,
            W - PAD - 150.0,
            PAD + 16.0 * k as f64,
            escape(name)
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combiner::WeightVector;
    use crate::controller::ErrorState;

    fn step(t: usize, w: WeightVector) -> StepRecord {
        StepRecord {
            time_index: t,
            state: ErrorState::from_raw(0.0, 10),
            weights: w,
            reward: 0.0,
            fallback: false,
        }
    }

    fn log(total: f64) -> EpisodeLog {
        EpisodeLog {
            episode_index: 0,
            segment: 0,
            initial_state: ErrorState::from_raw(0.0, 10),
            steps: Vec::new(),
            total_reward: total,
        }
    }

    #[test]
    fn nmse_examples() {
        assert_eq!(nmse(&[1.0, -2.0], &[1.0, -2.0]).unwrap(), 0.0);
        assert_eq!(nmse(&[0.0, 0.0, 0.0], &[1.0, 5.0, -3.0]).unwrap(), 1.0);
        assert!((nmse(&[2.0, 2.0], &[1.0, 2.0]).unwrap() - 0.2).abs() < 1e-15);
        assert!(matches!(nmse(&[1.0], &[0.0]), Err(Error::UndefinedMetric(_))));
        assert!(nmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn reward_curve_examples() {
        let logs: Vec<_> = [3.0, -1.0, 4.0].into_iter().map(log).collect();
        assert_eq!(reward_curve(&logs, 1), vec![3.0, -1.0, 4.0]);
        let constant: Vec<_> = (0..7).map(|_| log(2.5)).collect();
        assert!(reward_curve(&constant, 5).iter().all(|v| *v == 2.5));
        let ramp: Vec<_> = [0.0, 10.0, 20.0].into_iter().map(log).collect();
        assert_eq!(reward_curve(&ramp, 3)[1], 10.0);
    }

    #[test]
    fn band_dominance_examples() {
        let names: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let single: Vec<_> = (1..=10).map(|t| step(t, WeightVector::one_hot(4, 1))).collect();
        let bands = band_dominance(&single, 10, &names);
        assert_eq!(bands.len(), 1);
        assert_eq!((bands[0].model, bands[0].share), (1, 1.0));

        let uniform: Vec<_> = (1..=10).map(|t| step(t, WeightVector::uniform(4))).collect();
        let bands = band_dominance(&uniform, 10, &names);
        assert_eq!((bands[0].model, bands[0].share), (0, 0.25));

        let long: Vec<_> = (1..=5000).map(|t| step(t, WeightVector::uniform(4))).collect();
        let bands = band_dominance(&long, 1000, &names);
        assert_eq!(bands.len(), 5);
        assert_eq!((bands[4].start, bands[4].end), (4001, 5000));
    }

    #[test]
    fn svg_is_well_formed() {
        let svg = line_chart_svg("t", "x", &[("a<b".into(), vec![(0.0, 1.0), (1.0, 2.0)])]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a&lt;b"));
    }
}

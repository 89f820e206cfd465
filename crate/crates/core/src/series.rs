//! Univariate series storage, CSV ingestion, train/test splitting and
//! synthetic regime generation.
//!
//! Indices are 1-based by convention (the first CSV row is usually index 1),
//! and every range in this module is inclusive on both ends.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_for;

/// Inclusive range of 1-based time indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IndexRange {
    pub start: usize,
    pub end: usize,
}

impl IndexRange {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, index: usize) -> bool {
        self.start <= index && index <= self.end
    }

    pub fn overlaps(&self, other: &IndexRange) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn iter(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }
}

/// An ordered univariate series.
///
/// Positions inside a missing block hold a `0.0` placeholder; use
/// [`TimeSeries::get`] to distinguish them from observed values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    values: Vec<f64>,
    start_index: usize,
    missing_blocks: Vec<IndexRange>,
}

impl TimeSeries {
    pub fn new(values: Vec<f64>, start_index: usize) -> Result<Self> {
        Self::with_missing(values, start_index, Vec::new())
    }

    pub fn with_missing(
        mut values: Vec<f64>,
        start_index: usize,
        mut missing_blocks: Vec<IndexRange>,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Structure("series is empty".into()));
        }
        missing_blocks.sort_by_key(|b| b.start);
        let last = start_index + values.len() - 1;
        for (i, block) in missing_blocks.iter().enumerate() {
            if block.start > block.end || block.start < start_index || block.end > last {
                return Err(Error::Structure(format!(
                    "missing block [{}, {}] lies outside [{start_index}, {last}]",
                    block.start, block.end
                )));
            }
            if i > 0 && missing_blocks[i - 1].end >= block.start {
                return Err(Error::Structure(format!(
                    "missing blocks [{}, {}] and [{}, {}] overlap",
                    missing_blocks[i - 1].start,
                    missing_blocks[i - 1].end,
                    block.start,
                    block.end
                )));
            }
            for idx in block.iter() {
                values[idx - start_index] = 0.0;
            }
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Structure(format!(
                "non-finite value at index {}",
                start_index + pos
            )));
        }
        Ok(Self {
            values,
            start_index,
            missing_blocks,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn start_index(&self) -> usize {
        self.start_index
    }

    pub fn end_index(&self) -> usize {
        self.start_index + self.values.len() - 1
    }

    pub fn range(&self) -> IndexRange {
        IndexRange::new(self.start_index, self.end_index())
    }

    pub fn missing_blocks(&self) -> &[IndexRange] {
        &self.missing_blocks
    }

    /// Raw storage including placeholders.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_missing(&self, index: usize) -> bool {
        self.missing_blocks.iter().any(|b| b.contains(index))
    }

    /// Observed value at `index`, or `None` when it is outside the series or missing.
    pub fn get(&self, index: usize) -> Option<f64> {
        if index < self.start_index || index > self.end_index() || self.is_missing(index) {
            return None;
        }
        Some(self.values[index - self.start_index])
    }

    /// Copy of this series with the given ranges marked missing.
    pub fn masked(&self, blocks: &[IndexRange]) -> Result<Self> {
        let mut all: Vec<IndexRange> = self.missing_blocks.clone();
        all.extend_from_slice(blocks);
        all.sort_by_key(|b| b.start);
        all.dedup();
        Self::with_missing(self.values.clone(), self.start_index, all)
    }

    /// Observed values in `range`; fails if any of them is missing.
    pub fn slice(&self, range: IndexRange) -> Result<Vec<f64>> {
        range
            .iter()
            .map(|i| {
                self.get(i)
                    .ok_or_else(|| Error::Contract(format!("index {i} is missing or out of range")))
            })
            .collect()
    }

    /// Population variance of the observed values.
    pub fn variance(&self) -> f64 {
        let observed: Vec<f64> = self.range().iter().filter_map(|i| self.get(i)).collect();
        if observed.is_empty() {
            return 0.0;
        }
        let n = observed.len() as f64;
        let mean = observed.iter().sum::<f64>() / n;
        observed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
    }
}

/// How missing samples are encoded in a CSV file.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPolicy {
    #[default]
    EmptyCell,
    Sentinel(f64),
}

/// Loads an `index,value` CSV. A header row is optional.
pub fn load_csv(path: &Path, missing_policy: MissingPolicy) -> Result<TimeSeries> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, missing_policy)
}

pub fn parse_csv(text: &str, missing_policy: MissingPolicy) -> Result<TimeSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut indices: Vec<usize> = Vec::new();
    let mut values: Vec<Option<f64>> = Vec::new();
    for (row_no, record) in reader.records().enumerate() {
        let row = row_no + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if record.len() != 2 {
            return Err(Error::Parse {
                row,
                message: format!("expected 2 columns, found {}", record.len()),
            });
        }
        let index = match record[0].parse::<usize>() {
            Ok(i) => i,
            Err(_) if row == 1 => continue, // header
            Err(e) => {
                return Err(Error::Parse {
                    row,
                    message: format!("bad index {:?}: {e}", &record[0]),
                })
            }
        };
        let raw = &record[1];
        let value = if raw.is_empty() {
            None
        } else {
            let v: f64 = raw.parse().map_err(|e| Error::Parse {
                row,
                message: format!("bad value {raw:?}: {e}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    message: format!("non-finite value {raw:?}"),
                });
            }
            match missing_policy {
                MissingPolicy::Sentinel(s) if v == s => None,
                _ => Some(v),
            }
        };
        if let Some(&prev) = indices.last() {
            if index != prev + 1 {
                return Err(Error::Structure(format!(
                    "row {row}: index {index} does not follow {prev}"
                )));
            }
        }
        indices.push(index);
        values.push(value);
    }
    let Some(&start) = indices.first() else {
        return Err(Error::Structure("no data rows".into()));
    };

    let mut blocks = Vec::new();
    let mut open: Option<usize> = None;
    for (pos, v) in values.iter().enumerate() {
        match (v, open) {
            (None, None) => open = Some(start + pos),
            (Some(_), Some(s)) => {
                blocks.push(IndexRange::new(s, start + pos - 1));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(s) = open {
        blocks.push(IndexRange::new(s, start + values.len() - 1));
    }
    if blocks.iter().map(IndexRange::len).sum::<usize>() == values.len() {
        return Err(Error::Structure("every value is missing".into()));
    }
    TimeSeries::with_missing(
        values.into_iter().map(|v| v.unwrap_or(0.0)).collect(),
        start,
        blocks,
    )
}

/// Writes the series as `index,value` with an empty cell for missing samples.
pub fn save_csv(series: &TimeSeries, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(series.len() * 16);
    writeln!(out, "index,value").expect("write to Vec");
    for idx in series.range().iter() {
        match series.get(idx) {
            Some(v) => writeln!(out, "{idx},{v}"),
            None => writeln!(out, "{idx},"),
        }
        .expect("write to Vec");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Segmentation of a series into training episodes and test blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_segments: Vec<IndexRange>,
    pub test_segments: Vec<IndexRange>,
    /// Samples per training segment.
    pub episode_length: usize,
    /// Training segments, i.e. episodes per pass over the training data.
    pub episodes_per_pass: usize,
}

impl SplitPlan {
    pub fn total_train(&self) -> usize {
        self.train_segments.iter().map(IndexRange::len).sum()
    }

    pub fn total_test(&self) -> usize {
        self.test_segments.iter().map(IndexRange::len).sum()
    }

    pub fn test_indices(&self) -> Vec<usize> {
        self.test_segments.iter().flat_map(|r| r.iter()).collect()
    }

    pub fn validate(&self, series: &TimeSeries) -> Result<()> {
        if self.train_segments.is_empty() || self.test_segments.is_empty() {
            return Err(Error::Structure("split needs train and test segments".into()));
        }
        if self.episode_length == 0 || self.episodes_per_pass != self.train_segments.len() {
            return Err(Error::Structure("inconsistent episode layout".into()));
        }
        if self.total_train() != self.episode_length * self.episodes_per_pass {
            return Err(Error::Structure(format!(
                "total training length {} is not {} episodes of {}",
                self.total_train(),
                self.episodes_per_pass,
                self.episode_length
            )));
        }
        let range = series.range();
        for tr in &self.train_segments {
            if !(range.contains(tr.start) && range.contains(tr.end)) {
                return Err(Error::Structure(format!(
                    "train segment [{}, {}] outside the series",
                    tr.start, tr.end
                )));
            }
            if series.missing_blocks().iter().any(|b| b.overlaps(tr)) {
                return Err(Error::Structure(format!(
                    "train segment [{}, {}] contains missing samples",
                    tr.start, tr.end
                )));
            }
            if self.test_segments.iter().any(|t| t.overlaps(tr)) {
                return Err(Error::Structure("train and test segments overlap".into()));
            }
        }
        Ok(())
    }
}

pub const CATS_LENGTH: usize = 5000;
const CATS_PERIOD: usize = 1000;
const CATS_GAP: usize = 20;

/// The five 20-sample gaps of the CATS benchmark: 981–1000, …, 4981–5000.
pub fn cats_missing_blocks() -> Vec<IndexRange> {
    (0..CATS_LENGTH / CATS_PERIOD)
        .map(|k| {
            let end = (k + 1) * CATS_PERIOD;
            IndexRange::new(end - CATS_GAP + 1, end)
        })
        .collect()
}

/// Splits a series carrying the CATS layout into five 980-sample training
/// episodes and the five missing blocks as test segments.
pub fn cats_split(series: &TimeSeries) -> Result<SplitPlan> {
    let expected = cats_missing_blocks();
    if series.len() != CATS_LENGTH
        || series.start_index() != 1
        || series.missing_blocks() != expected.as_slice()
    {
        let fmt = |b: &[IndexRange]| {
            b.iter()
                .map(|r| format!("{}-{}", r.start, r.end))
                .collect::<Vec<_>>()
                .join(", ")
        };
        return Err(Error::Structure(format!(
            "not a CATS layout: expected {CATS_LENGTH} samples from index 1 with blocks [{}], \
             found {} samples from index {} with blocks [{}]",
            fmt(&expected),
            series.len(),
            series.start_index(),
            fmt(series.missing_blocks())
        )));
    }
    let train_segments = expected
        .iter()
        .map(|b| IndexRange::new(b.end + 1 - CATS_PERIOD, b.start - 1))
        .collect();
    let plan = SplitPlan {
        train_segments,
        test_segments: expected,
        episode_length: CATS_PERIOD - CATS_GAP,
        episodes_per_pass: CATS_LENGTH / CATS_PERIOD,
    };
    plan.validate(series)?;
    Ok(plan)
}

/// Cuts the series into `segments` equal chunks; the last `test_len`
/// samples of each chunk are held out.
pub fn ratio_split(series: &TimeSeries, segments: usize, test_len: usize) -> Result<SplitPlan> {
    if segments == 0 || !series.len().is_multiple_of(segments) {
        return Err(Error::Structure(format!(
            "series of length {} does not divide into {segments} segments",
            series.len()
        )));
    }
    let chunk = series.len() / segments;
    if test_len == 0 || test_len >= chunk {
        return Err(Error::Structure(format!(
            "test length {test_len} must be in [1, {})",
            chunk
        )));
    }
    let mut train_segments = Vec::with_capacity(segments);
    let mut test_segments = Vec::with_capacity(segments);
    for k in 0..segments {
        let s = series.start_index() + k * chunk;
        let e = s + chunk - 1;
        train_segments.push(IndexRange::new(s, e - test_len));
        test_segments.push(IndexRange::new(e - test_len + 1, e));
    }
    let plan = SplitPlan {
        train_segments,
        test_segments,
        episode_length: chunk - test_len,
        episodes_per_pass: segments,
    };
    // Test blocks may or may not be masked already; only train must be clean.
    plan.validate(series)?;
    Ok(plan)
}

/// One regime of a synthetic series. Local time `t` runs from 1 to `length`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SegmentSpec {
    /// `intercept + slope * t`
    LinearTrend {
        length: usize,
        slope: f64,
        intercept: f64,
        #[serde(default)]
        noise_std: f64,
    },
    /// `offset + amplitude * sin(2π t / period + phase)`
    Sine {
        length: usize,
        amplitude: f64,
        period: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        offset: f64,
        #[serde(default)]
        noise_std: f64,
    },
    /// `x_t = mean + phi1 (x_{t-1} - mean) + phi2 (x_{t-2} - mean) + e_t`,
    /// started from `initial = [x_{-1}, x_0]`, observed with additive noise.
    Ar2 {
        length: usize,
        phi1: f64,
        phi2: f64,
        #[serde(default)]
        mean: f64,
        #[serde(default)]
        innovation_std: f64,
        #[serde(default)]
        initial: Option<[f64; 2]>,
        #[serde(default)]
        noise_std: f64,
    },
    WhiteNoise {
        length: usize,
        #[serde(default)]
        mean: f64,
        noise_std: f64,
    },
}

impl SegmentSpec {
    pub fn length(&self) -> usize {
        match *self {
            SegmentSpec::LinearTrend { length, .. }
            | SegmentSpec::Sine { length, .. }
            | SegmentSpec::Ar2 { length, .. }
            | SegmentSpec::WhiteNoise { length, .. } => length,
        }
    }

    fn noise_std(&self) -> f64 {
        match *self {
            SegmentSpec::LinearTrend { noise_std, .. }
            | SegmentSpec::Sine { noise_std, .. }
            | SegmentSpec::Ar2 { noise_std, .. }
            | SegmentSpec::WhiteNoise { noise_std, .. } => noise_std,
        }
    }

    fn validate(&self, position: usize) -> Result<()> {
        if self.length() == 0 {
            return Err(Error::Parameter(format!("segment {position}: length must be positive")));
        }
        let noise = self.noise_std();
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(Error::Parameter(format!(
                "segment {position}: noise_std must be finite and >= 0, got {noise}"
            )));
        }
        match *self {
            SegmentSpec::Sine { period, .. } if !(period > 0.0) => Err(Error::Parameter(format!(
                "segment {position}: period must be positive"
            ))),
            SegmentSpec::Ar2 { innovation_std, .. } if !(innovation_std >= 0.0) => {
                Err(Error::Parameter(format!(
                    "segment {position}: innovation_std must be >= 0"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Noise-free values of this segment, or with noise drawn from `normal`.
    fn generate(&self, mut normal: impl FnMut() -> f64) -> Vec<f64> {
        let n = self.length();
        let mut out = Vec::with_capacity(n);
        match *self {
            SegmentSpec::LinearTrend {
                slope,
                intercept,
                noise_std,
                ..
            } => {
                for t in 1..=n {
                    out.push(intercept + slope * t as f64 + noise_std * normal());
                }
            }
            SegmentSpec::Sine {
                amplitude,
                period,
                phase,
                offset,
                noise_std,
                ..
            } => {
                for t in 1..=n {
                    let x = offset + amplitude * (2.0 * PI * t as f64 / period + phase).sin();
                    out.push(x + noise_std * normal());
                }
            }
            SegmentSpec::Ar2 {
                phi1,
                phi2,
                mean,
                innovation_std,
                initial,
                noise_std,
                ..
            } => {
                let [mut older, mut newer] = initial.unwrap_or([mean, mean]);
                for _ in 0..n {
                    let innovation = if innovation_std > 0.0 {
                        innovation_std * normal()
                    } else {
                        0.0
                    };
                    let x = mean + phi1 * (newer - mean) + phi2 * (older - mean) + innovation;
                    older = newer;
                    newer = x;
                    out.push(x + noise_std * normal());
                }
            }
            SegmentSpec::WhiteNoise { mean, noise_std, .. } => {
                for _ in 0..n {
                    out.push(mean + noise_std * normal());
                }
            }
        }
        out
    }
}

/// Concatenates regime segments into one series starting at index 1.
/// Deterministic for a fixed seed.
pub fn synth_regimes(segments: &[SegmentSpec], seed: u64) -> Result<TimeSeries> {
    if segments.is_empty() {
        return Err(Error::Parameter("at least one segment is required".into()));
    }
    for (i, s) in segments.iter().enumerate() {
        s.validate(i)?;
    }
    let mut rng = rng_for(seed, "synth-regimes");
    let mut values = Vec::with_capacity(segments.iter().map(SegmentSpec::length).sum());
    for s in segments {
        values.extend(s.generate(|| StandardNormal.sample(&mut rng)));
    }
    TimeSeries::new(values, 1)
}

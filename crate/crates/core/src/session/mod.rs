//! Session data model, canonical file formats, preprocessing, inclusion
//! gating, sequential splits, normalization and causal windowing.

pub mod gate;
pub mod io;
pub mod normalize;
pub mod preprocess;
pub mod split;
pub mod window;

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gate::{apply_inclusion_gate, gate_iqrs, session_iqr, GateOutcome, GateThreshold};
pub use io::{ingest_session, write_session, SessionFormat};
pub use normalize::{apply_normalizer, fit_normalizer, Normalizer};
pub use preprocess::preprocess_raw;
pub use split::{split_session, SegmentRanges, SplitSpec};
pub use window::{windows, windows_bounded, TargetBound, WindowView, WINDOW_LEN};

/// Canonical decoding sample rate.
pub const CANONICAL_RATE_HZ: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    MedialPrefrontal,
    Somatomotor,
    Motor,
    Visual,
}

impl Region {
    pub const ALL: [Region; 4] = [
        Region::MedialPrefrontal,
        Region::Somatomotor,
        Region::Motor,
        Region::Visual,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Region::MedialPrefrontal => "medial_prefrontal",
            Region::Somatomotor => "somatomotor",
            Region::Motor => "motor",
            Region::Visual => "visual",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Region {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Region::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::Format(format!("unknown region {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn as_str(&self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

impl FromStr for Side {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(Side::Left),
            "right" => Ok(Side::Right),
            _ => Err(Error::Format(format!("unknown side {s:?}"))),
        }
    }
}

/// Per-channel metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelInfo {
    pub name: String,
    pub region: Region,
    pub side: Side,
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("Matrix::new", &[rows, cols], &[data.len()]));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::shape("Matrix::from_rows", &[cols], &[r.len()]));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }
}

/// One recording: a C×T channel matrix at a fixed rate with an aligned speed trace.
///
/// Immutable after construction; all invariants are checked in [`Session::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    id: String,
    rat_id: String,
    sample_rate_hz: f64,
    eeg: Matrix,
    speed: Vec<f64>,
    channels: Vec<ChannelInfo>,
    /// Provenance and free-form metadata (e.g. the channel-functionality flag).
    pub metadata: BTreeMap<String, String>,
}

impl Session {
    pub fn new(
        id: impl Into<String>,
        rat_id: impl Into<String>,
        sample_rate_hz: f64,
        eeg: Matrix,
        speed: Vec<f64>,
        channels: Vec<ChannelInfo>,
    ) -> Result<Self> {
        let id = id.into();
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::Integrity(format!(
                "session {id}: sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if eeg.cols != speed.len() {
            return Err(Error::Integrity(format!(
                "session {id}: speed has {} samples but eeg has {}",
                speed.len(),
                eeg.cols
            )));
        }
        if eeg.rows != channels.len() {
            return Err(Error::Integrity(format!(
                "session {id}: {} channel labels for {} eeg channels",
                channels.len(),
                eeg.rows
            )));
        }
        if eeg.rows == 0 {
            return Err(Error::Integrity(format!("session {id}: no channels")));
        }
        if speed.len() < WINDOW_LEN {
            return Err(Error::Integrity(format!(
                "session {id}: {} samples is shorter than one window",
                speed.len()
            )));
        }
        for c in 0..eeg.rows {
            if let Some(t) = eeg.row(c).iter().position(|v| !v.is_finite()) {
                return Err(Error::Integrity(format!(
                    "session {id}: non-finite eeg value in channel {} at index {t}",
                    channels[c].name
                )));
            }
        }
        if let Some(t) = speed.iter().position(|v| !v.is_finite()) {
            return Err(Error::Integrity(format!(
                "session {id}: non-finite speed at index {t}"
            )));
        }
        Ok(Self {
            id,
            rat_id: rat_id.into(),
            sample_rate_hz,
            eeg,
            speed,
            channels,
            metadata: BTreeMap::new(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }
    pub fn rat_id(&self) -> &str {
        &self.rat_id
    }
    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }
    pub fn n_channels(&self) -> usize {
        self.eeg.rows
    }
    pub fn n_samples(&self) -> usize {
        self.eeg.cols
    }
    pub fn eeg(&self) -> &Matrix {
        &self.eeg
    }
    pub fn channel(&self, c: usize) -> &[f64] {
        self.eeg.row(c)
    }
    pub fn speed(&self) -> &[f64] {
        &self.speed
    }
    pub fn channels(&self) -> &[ChannelInfo] {
        &self.channels
    }

    /// Whether every channel was flagged functional (defaults to true).
    pub fn channels_functional(&self) -> bool {
        self.metadata
            .get("channels_functional")
            .map_or(true, |v| v != "false")
    }

    /// Same session with its channel matrix replaced (labels and speed kept).
    pub fn with_eeg(&self, eeg: Matrix) -> Result<Self> {
        let mut s = Session::new(
            self.id.clone(),
            self.rat_id.clone(),
            self.sample_rate_hz,
            eeg,
            self.speed.clone(),
            self.channels.clone(),
        )?;
        s.metadata = self.metadata.clone();
        Ok(s)
    }

    /// Keeps only the listed channels, in the given order.
    pub fn select_channels(&self, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(Error::Argument(format!("session {}: empty channel selection", self.id)));
        }
        let mut data = Vec::with_capacity(idx.len() * self.n_samples());
        let mut channels = Vec::with_capacity(idx.len());
        for &c in idx {
            if c >= self.n_channels() {
                return Err(Error::Argument(format!("channel index {c} out of range")));
            }
            data.extend_from_slice(self.channel(c));
            channels.push(self.channels[c].clone());
        }
        let mut s = Session::new(
            self.id.clone(),
            self.rat_id.clone(),
            self.sample_rate_hz,
            Matrix::new(idx.len(), self.n_samples(), data)?,
            self.speed.clone(),
            channels,
        )?;
        s.metadata = self.metadata.clone();
        Ok(s)
    }

    /// Indices of channels whose region is in `regions` (both hemispheres).
    pub fn channels_in(&self, regions: &[Region]) -> Vec<usize> {
        (0..self.n_channels())
            .filter(|&c| regions.contains(&self.channels[c].region))
            .collect()
    }

    /// Samples `range` of every channel, copied out.
    pub fn eeg_range(&self, range: Range<usize>) -> Matrix {
        let n = range.len();
        let mut data = Vec::with_capacity(self.n_channels() * n);
        for c in 0..self.n_channels() {
            data.extend_from_slice(&self.channel(c)[range.clone()]);
        }
        Matrix {
            rows: self.n_channels(),
            cols: n,
            data,
        }
    }
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;

    #[test]
    fn invariants_are_enforced() {
        let m = Matrix::new(2, 30, vec![0.0; 60]).unwrap();
        assert!(matches!(
            Session::new("a", "r", 100.0, m.clone(), vec![0.0; 29], labels(2)),
            Err(Error::Integrity(_))
        ));
        assert!(Session::new("a", "r", 0.0, m.clone(), vec![0.0; 30], labels(2)).is_err());
        assert!(Session::new("a", "r", 100.0, m.clone(), vec![0.0; 30], labels(3)).is_err());
        let mut bad = m.clone();
        bad.data[35] = f64::NAN;
        let err = Session::new("a", "r", 100.0, bad, vec![0.0; 30], labels(2)).unwrap_err();
        assert!(err.to_string().contains("ch02") && err.to_string().contains("index 5"));
        let short = Matrix::new(2, 19, vec![0.0; 38]).unwrap();
        assert!(Session::new("a", "r", 100.0, short, vec![0.0; 19], labels(2)).is_err());
    }

    #[test]
    fn channel_selection_by_region() {
        let s = ramp_session(8, 40);
        let vis = s.channels_in(&[Region::Visual]);
        assert_eq!(vis, vec![3, 7]);
        let sub = s.select_channels(&vis).unwrap();
        assert_eq!(sub.n_channels(), 2);
        assert_eq!(sub.channel(1)[0], 7000.0);
    }
}

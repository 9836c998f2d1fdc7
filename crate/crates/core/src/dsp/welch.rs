//! Welch power spectral density: Hann-windowed, overlapped, segment-averaged
//! periodograms with one-sided density scaling.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchParams {
    pub fs: f64,
    pub nfft: usize,
    pub overlap: f64,
}

impl Default for WelchParams {
    fn default() -> Self {
        Self {
            fs: 100.0,
            nfft: 128,
            overlap: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdEstimate {
    /// `k · fs / nfft` for `k = 0..=nfft/2`.
    pub frequencies: Vec<f64>,
    /// Density in signal units² per Hz.
    pub power: Vec<f64>,
    pub params: WelchParams,
    pub n_segments: usize,
}

impl PsdEstimate {
    pub fn bin_width(&self) -> f64 {
        self.params.fs / self.params.nfft as f64
    }

    /// `Σ P(f) · Δf`: the mean-square content captured by the estimate.
    pub fn total_power(&self) -> f64 {
        self.power.iter().sum::<f64>() * self.bin_width()
    }
}

/// Accumulates periodograms over any number of disjoint runs of samples.
pub struct WelchAccumulator {
    params: WelchParams,
    step: usize,
    window: Vec<f64>,
    scale: f64,
    fft: Arc<dyn Fft<f64>>,
    sum: Vec<f64>,
    n_segments: usize,
    buf: Vec<Complex64>,
}

impl WelchAccumulator {
    pub fn new(params: WelchParams) -> Result<Self> {
        let WelchParams { fs, nfft, overlap } = params;
        if nfft < 2 || nfft % 2 != 0 {
            return Err(Error::Argument(format!("nfft must be even and >= 2, got {nfft}")));
        }
        if !(0.0..1.0).contains(&overlap) || !(fs > 0.0) {
            return Err(Error::Argument(format!(
                "invalid Welch parameters fs={fs} overlap={overlap}"
            )));
        }
        let noverlap = (overlap * nfft as f64).round() as usize;
        let step = (nfft - noverlap).max(1);
        // periodic Hann
        let window: Vec<f64> = (0..nfft)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / nfft as f64).cos())
            .collect();
        let wss: f64 = window.iter().map(|w| w * w).sum();
        let fft = FftPlanner::new().plan_fft_forward(nfft);
        Ok(Self {
            params,
            step,
            window,
            scale: 1.0 / (fs * wss),
            fft,
            sum: vec![0.0; nfft / 2 + 1],
            n_segments: 0,
            buf: vec![Complex64::new(0.0, 0.0); nfft],
        })
    }

    /// Adds every full segment of `run`; runs shorter than `nfft` contribute nothing.
    pub fn add_run(&mut self, run: &[f64]) -> usize {
        let nfft = self.params.nfft;
        let mut added = 0;
        let mut start = 0;
        while start + nfft <= run.len() {
            let seg = &run[start..start + nfft];
            let mean = seg.iter().sum::<f64>() / nfft as f64;
            for ((b, x), w) in self.buf.iter_mut().zip(seg).zip(&self.window) {
                *b = Complex64::new((x - mean) * w, 0.0);
            }
            self.fft.process(&mut self.buf);
            let last = nfft / 2;
            for (k, acc) in self.sum.iter_mut().enumerate() {
                let mut p = self.buf[k].norm_sqr() * self.scale;
                if k != 0 && k != last {
                    p *= 2.0;
                }
                *acc += p;
            }
            self.n_segments += 1;
            added += 1;
            start += self.step;
        }
        added
    }

    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    /// Average over accumulated segments, or `None` if there were none.
    pub fn finish(&self) -> Option<PsdEstimate> {
        if self.n_segments == 0 {
            return None;
        }
        let nfft = self.params.nfft;
        let denom = self.n_segments as f64;
        Some(PsdEstimate {
            frequencies: (0..=nfft / 2)
                .map(|k| k as f64 * self.params.fs / nfft as f64)
                .collect(),
            power: self.sum.iter().map(|s| s / denom).collect(),
            params: self.params,
            n_segments: self.n_segments,
        })
    }
}

/// Welch PSD of one contiguous signal.
pub fn welch_psd(x: &[f64], fs: f64, nfft: usize, overlap: f64) -> Result<PsdEstimate> {
    if x.len() < nfft {
        return Err(Error::Argument(format!(
            "welch_psd needs at least nfft={nfft} samples, got {}",
            x.len()
        )));
    }
    let mut acc = WelchAccumulator::new(WelchParams { fs, nfft, overlap })?;
    acc.add_run(x);
    Ok(acc.finish().expect("at least one segment"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_signal() {
        let p = welch_psd(&[0.0; 1000], 100.0, 128, 0.5).unwrap();
        assert!(p.power.iter().all(|v| *v == 0.0));
        assert_eq!(p.frequencies.len(), 65);
        assert_eq!(p.frequencies[64], 50.0);
    }

    #[test]
    fn bin_centred_sinusoid_parseval() {
        let x: Vec<f64> = (0..12_800)
            .map(|i| (2.0 * PI * 25.0 * i as f64 / 100.0 + 0.3).sin())
            .collect();
        let p = welch_psd(&x, 100.0, 128, 0.5).unwrap();
        assert!((p.total_power() - 0.5).abs() / 0.5 < 0.03, "{}", p.total_power());
        let peak = p
            .power
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(peak, 32);
    }

    #[test]
    fn segment_count() {
        let p = welch_psd(&vec![1.0; 1024], 100.0, 128, 0.5).unwrap();
        assert_eq!(p.n_segments, 15);
        assert!(welch_psd(&[1.0; 100], 100.0, 128, 0.5).is_err());
    }

    #[test]
    fn matches_reference_welch() {
        // scipy.signal.welch(x, fs=100, nperseg=128, noverlap=64, window='hann')
        let x: Vec<f64> = (0..400).map(|i| ((i * 7919 % 101) as f64) / 50.0 - 1.0).collect();
        let p = welch_psd(&x, 100.0, 128, 0.5).unwrap();
        for (k, want) in REF_BINS {
            assert!((p.power[k] - want).abs() < 1e-12 * want.abs().max(1.0), "bin {k}");
        }
    }

    const REF_BINS: [(usize, f64); 7] = [
        (0, 0.000_104_049_114_630_171_1),
        (1, 0.000_288_701_410_365_450_7),
        (5, 0.001_166_602_558_485_203),
        (17, 0.000_974_635_912_296_868_5),
        (32, 0.002_570_645_845_904_09),
        (63, 0.000_680_066_771_505_382_3),
        (64, 0.000_435_244_984_795_058_86),
    ];
}

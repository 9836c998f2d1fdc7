//! Synthetic sessions with a known speed-to-EEG mapping.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dsp::{design_butterworth, sosfilt, Band, FilterKind};
use crate::error::{Error, Result};
use crate::session::{ChannelInfo, Matrix, Region, Session, Side, CANONICAL_RATE_HZ};
use crate::util::derive_seed;

/// How speed enters the channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Law {
    /// A slow component proportional to speed plus an 8 Hz carrier whose
    /// amplitude ramps with speed.
    Linear,
    /// Speed only modulates carrier amplitudes, with a weak saturating slow term.
    Nonlinear,
}

/// Per-rat change of the channel mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatTransform {
    Shared,
    Permute,
    PermuteScale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FleetSpec {
    pub n_rats: usize,
    pub sessions_per_rat: usize,
    pub n_samples: usize,
    /// Multiple of 8: every region gets the same number of channels per side.
    pub n_channels: usize,
    pub law: Law,
    /// Std of white noise added to every channel (sources have unit variance).
    pub noise: f64,
    pub rat_transform: RatTransform,
    /// Relative per-session jitter of the mixing weights.
    pub session_jitter: f64,
    /// Channels encode speed this far in the future.
    pub lead_ms: i64,
    /// Only channels in these regions carry speed; `None` means all.
    pub signal_regions: Option<Vec<Region>>,
    /// Speed is carried only by an amplitude-modulated carrier in this band.
    pub drive_band: Option<Band>,
    /// Time constant of the speed process in seconds.
    pub speed_tau_s: f64,
    /// Log-normal spread of the per-session speed scale.
    pub scale_spread: f64,
    pub seed: u64,
}

impl Default for FleetSpec {
    fn default() -> Self {
        Self {
            n_rats: 4,
            sessions_per_rat: 4,
            n_samples: 6000,
            n_channels: 16,
            law: Law::Linear,
            noise: 0.5,
            rat_transform: RatTransform::Shared,
            session_jitter: 0.1,
            lead_ms: 0,
            signal_regions: None,
            drive_band: None,
            speed_tau_s: 0.5,
            scale_spread: 0.3,
            seed: 0,
        }
    }
}

/// Channel labels: regions in blocks of `c / 4`, sides alternating.
pub fn synthetic_channels(c: usize) -> Vec<ChannelInfo> {
    let per = (c / 4).max(1);
    (0..c)
        .map(|i| ChannelInfo {
            name: format!("ch{i:02}"),
            region: Region::ALL[(i / per).min(3)],
            side: if i % 2 == 0 { Side::Left } else { Side::Right },
        })
        .collect()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn standardize(x: &mut [f64]) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
    x.iter_mut().for_each(|v| *v = (*v - m) / sd);
}

/// Smoothed Ornstein–Uhlenbeck trace with unit variance.
fn smooth_ou(n: usize, tau_s: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let a = (-1.0 / (CANONICAL_RATE_HZ * tau_s)).exp();
    let q = (1.0 - a * a).sqrt();
    let burn = (5.0 * tau_s * CANONICAL_RATE_HZ) as usize;
    let (mut x, mut y) = (normal(rng), 0.0);
    let mut out = Vec::with_capacity(n);
    for t in 0..n + burn {
        x = a * x + q * normal(rng);
        y = a * y + (1.0 - a) * x;
        if t >= burn {
            out.push(y);
        }
    }
    standardize(&mut out);
    out
}

/// Narrowband noise in `[lo, hi]` Hz, unit variance.
fn band_noise(n: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let f = design_butterworth(2, FilterKind::Bandpass, &[lo, hi], CANONICAL_RATE_HZ)?;
    let w: Vec<f64> = (0..n + 400).map(|_| normal(rng)).collect();
    let mut y = sosfilt(&f, &w)[400..].to_vec();
    standardize(&mut y);
    Ok(y)
}

fn carrier_hz(band: Band) -> f64 {
    match band {
        Band::Delta => 2.5,
        Band::Theta => 6.0,
        Band::Alpha => 10.0,
        Band::Beta => 20.0,
        Band::Gamma => 38.0,
        Band::Fullband => 8.0,
    }
}

/// Amplitude-modulated sinusoid with a slowly wandering phase.
fn am_carrier(drive: &[f64], hz: f64, depth: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut phase = rng.random_range(0.0..std::f64::consts::TAU);
    let mut out = Vec::with_capacity(drive.len());
    for d in drive {
        phase += std::f64::consts::TAU * hz / CANONICAL_RATE_HZ + 0.02 * normal(rng);
        out.push((1.0 + depth * d) * phase.sin());
    }
    standardize(&mut out);
    out
}

struct Mapping {
    /// `[channel][source]` loadings.
    weights: Vec<Vec<f64>>,
}

/// Number of speed-bearing sources; background sources follow them.
const N_SIGNAL: usize = 3;
const BACKGROUND: [(f64, f64); 4] = [(1.0, 4.0), (4.0, 8.0), (8.0, 12.0), (15.0, 30.0)];

fn base_mapping(spec: &FleetSpec) -> Mapping {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &["mapping"]));
    let labels = synthetic_channels(spec.n_channels);
    let weights = labels
        .iter()
        .map(|ch| {
            let carries = spec.signal_regions.as_ref().is_none_or(|r| r.contains(&ch.region));
            (0..N_SIGNAL + BACKGROUND.len())
                .map(|k| {
                    let w = normal(&mut rng);
                    if k < N_SIGNAL && !carries {
                        0.0
                    } else {
                        w
                    }
                })
                .collect()
        })
        .collect();
    Mapping { weights }
}

/// Generates `n_rats × sessions_per_rat` sessions. Identical specs give
/// bitwise-identical sessions.
pub fn generate_synthetic_fleet(spec: &FleetSpec) -> Result<Vec<Session>> {
    if spec.n_rats == 0 || spec.sessions_per_rat == 0 {
        return Err(Error::Argument("fleet needs at least one rat and one session".into()));
    }
    if spec.n_channels == 0 || spec.n_channels % 8 != 0 {
        return Err(Error::Argument(format!(
            "fleet channel count must be a positive multiple of 8, got {}",
            spec.n_channels
        )));
    }
    if spec.n_samples < 200 || !(spec.noise >= 0.0) || !(spec.speed_tau_s > 0.0) {
        return Err(Error::Argument("fleet needs >= 200 samples, noise >= 0 and tau > 0".into()));
    }
    let lead = crate::session::window::offset_samples(spec.lead_ms, CANONICAL_RATE_HZ)?;
    if lead < 0 {
        return Err(Error::Argument("lead must be non-negative".into()));
    }
    let lead = lead as usize;
    let base = base_mapping(spec);
    let c = spec.n_channels;
    let n_src = N_SIGNAL + BACKGROUND.len();
    let mut out = Vec::with_capacity(spec.n_rats * spec.sessions_per_rat);
    for rat in 0..spec.n_rats {
        let rat_id = format!("rat{rat:02}");
        let mut rr = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &["rat", &rat_id]));
        let mut perm: Vec<usize> = (0..c).collect();
        let mut gains = vec![1.0; c];
        if spec.rat_transform != RatTransform::Shared {
            perm.shuffle(&mut rr);
        }
        if spec.rat_transform == RatTransform::PermuteScale {
            gains.iter_mut().for_each(|g| *g = rr.random_range(0.5..2.0));
        }
        for sess in 0..spec.sessions_per_rat {
            let id = format!("r{rat:02}s{sess:02}");
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &["session", &id]));
            let t = spec.n_samples;
            let latent = smooth_ou(t + lead, spec.speed_tau_s, &mut rng);
            let scale = 10.0 * (spec.scale_spread * normal(&mut rng)).exp();
            let unit: Vec<f64> = latent.iter().map(|y| (1.0 + 0.8 * y).max(0.0)).collect();
            let speed: Vec<f64> = unit[..t].iter().map(|u| scale * u).collect();
            // channels see speed `lead` samples ahead
            let drive: Vec<f64> = unit[lead..lead + t].to_vec();
            let centered: Vec<f64> = drive.iter().map(|u| u - 1.0).collect();

            let mut sources: Vec<Vec<f64>> = Vec::with_capacity(n_src);
            match (spec.drive_band, spec.law) {
                (Some(band), _) => {
                    sources.push(am_carrier(&centered, carrier_hz(band), 0.9, &mut rng));
                    sources.push(vec![0.0; t]);
                    sources.push(vec![0.0; t]);
                }
                (None, Law::Linear) => {
                    let mut slow = centered.clone();
                    standardize(&mut slow);
                    sources.push(slow);
                    sources.push(am_carrier(&centered, 8.0, 0.9, &mut rng));
                    sources.push(vec![0.0; t]);
                }
                (None, Law::Nonlinear) => {
                    let mut slow: Vec<f64> = centered.iter().map(|u| (2.0 * u).tanh().powi(2)).collect();
                    standardize(&mut slow);
                    sources.push(slow);
                    sources.push(am_carrier(&centered, 8.0, 0.9, &mut rng));
                    sources.push(am_carrier(&centered, 5.0, 0.9, &mut rng));
                }
            }
            for &(lo, hi) in &BACKGROUND {
                sources.push(band_noise(t, lo, hi, &mut rng)?);
            }

            let mut data = vec![0.0; c * t];
            for ch in 0..c {
                let row = &base.weights[perm[ch]];
                let w: Vec<f64> = row
                    .iter()
                    .map(|w| w * gains[ch] * (1.0 + spec.session_jitter * normal(&mut rng)))
                    .collect();
                let dst = &mut data[ch * t..(ch + 1) * t];
                for (k, src) in sources.iter().enumerate() {
                    if w[k] != 0.0 {
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d += w[k] * s);
                    }
                }
                if spec.noise > 0.0 {
                    dst.iter_mut().for_each(|d| *d += spec.noise * normal(&mut rng));
                }
            }
            // stored as f32 on disk; rounding here keeps in-memory and reloaded fleets identical
            let f32_grid = |v: &mut f64| *v = *v as f32 as f64;
            data.iter_mut().for_each(f32_grid);
            let mut speed = speed;
            speed.iter_mut().for_each(f32_grid);
            let mut s = Session::new(
                id,
                rat_id.clone(),
                CANONICAL_RATE_HZ,
                Matrix::new(c, t, data)?,
                speed,
                synthetic_channels(c),
            )?;
            s.metadata.insert("synthetic".into(), "true".into());
            s.metadata.insert("speed_scale".into(), format!("{scale}"));
            out.push(s);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::{apply_inclusion_gate, GateThreshold};

    fn small() -> FleetSpec {
        FleetSpec {
            n_rats: 2,
            sessions_per_rat: 2,
            n_samples: 1000,
            n_channels: 8,
            ..FleetSpec::default()
        }
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let a = generate_synthetic_fleet(&small()).unwrap();
        let b = generate_synthetic_fleet(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_fleet(&FleetSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(a[0].eeg(), c[0].eeg());
    }

    #[test]
    fn speed_is_non_negative_and_labels_cover_regions() {
        let f = generate_synthetic_fleet(&small()).unwrap();
        assert_eq!(f.len(), 4);
        for s in &f {
            assert!(s.speed().iter().all(|v| *v >= 0.0));
            for r in Region::ALL {
                assert_eq!(s.channels_in(&[r]).len(), 2);
            }
        }
        assert_eq!(f[2].rat_id(), "rat01");
    }

    #[test]
    fn gate_excludes_about_a_tenth() {
        let spec = FleetSpec {
            n_rats: 5,
            sessions_per_rat: 4,
            n_samples: 2000,
            n_channels: 8,
            ..FleetSpec::default()
        };
        let out = apply_inclusion_gate(generate_synthetic_fleet(&spec).unwrap(), GateThreshold::default()).unwrap();
        assert_eq!(out.excluded.len(), 2);
    }

    #[test]
    fn silent_regions_carry_no_signal_sources() {
        let spec = FleetSpec {
            signal_regions: Some(vec![Region::Visual]),
            ..small()
        };
        let m = base_mapping(&spec);
        let labels = synthetic_channels(8);
        for (w, ch) in m.weights.iter().zip(&labels) {
            let signal = w[..N_SIGNAL].iter().any(|v| *v != 0.0);
            assert_eq!(signal, ch.region == Region::Visual);
        }
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(generate_synthetic_fleet(&FleetSpec { n_channels: 12, ..small() }).is_err());
        assert!(generate_synthetic_fleet(&FleetSpec { n_rats: 0, ..small() }).is_err());
    }
}

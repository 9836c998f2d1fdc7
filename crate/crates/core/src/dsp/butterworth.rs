//! Digital Butterworth design as cascaded second-order sections.
//!
//! Analog prototype poles sit on the unit circle in the left half plane,
//! `p_k = exp(iπ(2k + N + 1) / 2N)`. The prototype is frequency-transformed
//! (lowpass, highpass or bandpass) at pre-warped edges and mapped to the
//! z-plane with the bilinear transform, so the digital response hits the
//! analog magnitude exactly at the requested edges.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    Lowpass,
    Highpass,
    Bandpass,
}

/// One biquad: `b0 + b1 z⁻¹ + b2 z⁻²` over `1 + a1 z⁻¹ + a2 z⁻²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, zinv: Complex64) -> Complex64 {
        let z2 = zinv * zinv;
        (self.b[0] + zinv * self.b[1] + z2 * self.b[2]) / (1.0 + zinv * self.a[1] + z2 * self.a[2])
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[1] + self.a[2])
    }
}

/// A designed filter: ordered sections plus the design parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SosFilter {
    pub sections: Vec<Biquad>,
    pub kind: FilterKind,
    pub edges_hz: Vec<f64>,
    pub fs_hz: f64,
    /// Prototype order as requested (a bandpass has twice as many poles).
    pub order: usize,
}

impl SosFilter {
    /// Number of poles of the digital filter.
    pub fn n_poles(&self) -> usize {
        2 * self.sections.len()
    }

    pub fn response(&self, f_hz: f64) -> Complex64 {
        let w = 2.0 * PI * f_hz / self.fs_hz;
        let zinv = Complex64::from_polar(1.0, -w);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(zinv))
    }

    pub fn magnitude(&self, f_hz: f64) -> f64 {
        self.response(f_hz).norm()
    }

    /// z-plane poles, one per conjugate pair member.
    pub fn poles(&self) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.n_poles());
        for s in &self.sections {
            let disc = Complex64::new(s.a[1] * s.a[1] - 4.0 * s.a[2], 0.0).sqrt();
            out.push((-s.a[1] + disc) / 2.0);
            out.push((-s.a[1] - disc) / 2.0);
        }
        out
    }

    pub(crate) fn dc_gains(&self) -> Vec<f64> {
        self.sections.iter().map(Biquad::dc_gain).collect()
    }
}

fn prewarp(f_hz: f64, fs: f64) -> f64 {
    2.0 * fs * (PI * f_hz / fs).tan()
}

fn bilinear(s: Complex64, fs: f64) -> Complex64 {
    let k = 2.0 * fs;
    (k + s) / (k - s)
}

/// Butterworth design of even prototype order (2, 4, 6 or 8).
///
/// `edges_hz` holds one edge for lowpass/highpass and `[low, high]` for bandpass.
pub fn design_butterworth(
    order: usize,
    kind: FilterKind,
    edges_hz: &[f64],
    fs_hz: f64,
) -> Result<SosFilter> {
    if !(fs_hz > 0.0 && fs_hz.is_finite()) {
        return Err(Error::Design(format!("invalid sampling rate {fs_hz}")));
    }
    if order == 0 || order % 2 != 0 || order > 8 {
        return Err(Error::Design(format!("unsupported order {order} (even, <= 8)")));
    }
    let want = if kind == FilterKind::Bandpass { 2 } else { 1 };
    if edges_hz.len() != want {
        return Err(Error::Design(format!(
            "{kind:?} needs {want} edge(s), got {}",
            edges_hz.len()
        )));
    }
    let nyquist = fs_hz / 2.0;
    for &e in edges_hz {
        if !(e > 0.0 && e < nyquist) {
            return Err(Error::Design(format!(
                "edge {e} Hz outside (0, {nyquist}) Hz"
            )));
        }
    }
    if kind == FilterKind::Bandpass && edges_hz[0] >= edges_hz[1] {
        return Err(Error::Design(format!(
            "bandpass edges must increase, got {edges_hz:?}"
        )));
    }

    let n = order as f64;
    let proto: Vec<Complex64> = (0..order)
        .map(|k| Complex64::from_polar(1.0, PI * (2.0 * k as f64 + n + 1.0) / (2.0 * n)))
        .collect();

    let analog: Vec<Complex64> = match kind {
        FilterKind::Lowpass => {
            let wc = prewarp(edges_hz[0], fs_hz);
            proto.iter().map(|p| p * wc).collect()
        }
        FilterKind::Highpass => {
            let wc = prewarp(edges_hz[0], fs_hz);
            proto.iter().map(|p| wc / p).collect()
        }
        FilterKind::Bandpass => {
            let w1 = prewarp(edges_hz[0], fs_hz);
            let w2 = prewarp(edges_hz[1], fs_hz);
            let bw = w2 - w1;
            let w0sq = w1 * w2;
            proto
                .iter()
                .flat_map(|p| {
                    let pb = p * bw;
                    let disc = (pb * pb - 4.0 * w0sq).sqrt();
                    [(pb + disc) / 2.0, (pb - disc) / 2.0]
                })
                .collect()
        }
    };

    let mut upper: Vec<Complex64> = analog
        .iter()
        .map(|s| bilinear(*s, fs_hz))
        .filter(|z| z.im > 0.0)
        .collect();
    if upper.len() * 2 != analog.len() {
        return Err(Error::Design("unexpected real pole in design".into()));
    }
    // Sections ordered by pole radius, least resonant first.
    upper.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    let zeros_b = match kind {
        FilterKind::Lowpass => [1.0, 2.0, 1.0],
        FilterKind::Highpass => [1.0, -2.0, 1.0],
        FilterKind::Bandpass => [1.0, 0.0, -1.0],
    };
    let mut filter = SosFilter {
        sections: upper
            .iter()
            .map(|z| Biquad {
                b: zeros_b,
                a: [1.0, -2.0 * z.re, z.norm_sqr()],
            })
            .collect(),
        kind,
        edges_hz: edges_hz.to_vec(),
        fs_hz,
        order,
    };
    if filter.poles().iter().any(|p| p.norm() >= 1.0) {
        return Err(Error::Design("designed filter is unstable".into()));
    }

    // Unit gain at the passband reference frequency.
    let f_ref = match kind {
        FilterKind::Lowpass => 0.0,
        FilterKind::Highpass => nyquist,
        FilterKind::Bandpass => {
            let w0 = (prewarp(edges_hz[0], fs_hz) * prewarp(edges_hz[1], fs_hz)).sqrt();
            fs_hz / PI * (w0 / (2.0 * fs_hz)).atan()
        }
    };
    let g = filter.magnitude(f_ref);
    for v in filter.sections[0].b.iter_mut() {
        *v /= g;
    }
    Ok(filter)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Analog prototype magnitude evaluated at the pre-warped frequency.
    fn analog_magnitude(order: usize, kind: FilterKind, edges: &[f64], fs: f64, f: f64) -> f64 {
        let w = prewarp(f, fs);
        let x = match kind {
            FilterKind::Lowpass => w / prewarp(edges[0], fs),
            FilterKind::Highpass => prewarp(edges[0], fs) / w,
            FilterKind::Bandpass => {
                let w1 = prewarp(edges[0], fs);
                let w2 = prewarp(edges[1], fs);
                ((w * w - w1 * w2) / (w * (w2 - w1))).abs()
            }
        };
        1.0 / (1.0 + x.powi(2 * order as i32)).sqrt()
    }

    #[test]
    fn matches_analog_prototype_on_grid() {
        let cases: [(usize, FilterKind, &[f64]); 5] = [
            (2, FilterKind::Lowpass, &[45.0]),
            (4, FilterKind::Lowpass, &[10.0]),
            (4, FilterKind::Highpass, &[30.0]),
            (4, FilterKind::Bandpass, &[4.0, 8.0]),
            (4, FilterKind::Bandpass, &[1.0, 4.0]),
        ];
        for (order, kind, edges) in cases {
            let f = design_butterworth(order, kind, edges, 100.0).unwrap();
            for i in 1..1000 {
                let hz = 50.0 * i as f64 / 1000.0;
                let got = f.magnitude(hz);
                let want = analog_magnitude(order, kind, edges, 100.0, hz);
                assert!((got - want).abs() < 1e-9, "{kind:?} {edges:?} at {hz}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn theta_bandpass_selectivity() {
        let f = design_butterworth(4, FilterKind::Bandpass, &[4.0, 8.0], 100.0).unwrap();
        assert!(f.magnitude(6.0) >= 0.99);
        assert!(f.magnitude(20.0) <= 0.01);
        assert_eq!(f.n_poles(), 8);
    }

    #[test]
    fn corner_gain_is_half_power() {
        let f = design_butterworth(2, FilterKind::Lowpass, &[45.0], 100.0).unwrap();
        assert!((f.magnitude(45.0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
        assert!((f.magnitude(0.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nyquist_violation() {
        assert!(matches!(
            design_butterworth(2, FilterKind::Lowpass, &[60.0], 100.0),
            Err(Error::Design(_))
        ));
        assert!(design_butterworth(3, FilterKind::Lowpass, &[10.0], 100.0).is_err());
        assert!(design_butterworth(4, FilterKind::Bandpass, &[8.0, 4.0], 100.0).is_err());
    }

    #[test]
    fn stable_and_monotone_lowpass() {
        for order in [2, 4, 6, 8] {
            let f = design_butterworth(order, FilterKind::Lowpass, &[12.0], 100.0).unwrap();
            assert!(f.poles().iter().all(|p| p.norm() < 1.0));
            let mut prev = f64::INFINITY;
            for i in 0..1000 {
                let m = f.magnitude(50.0 * i as f64 / 999.0);
                assert!(m <= prev + 1e-12);
                prev = m;
            }
        }
    }
}

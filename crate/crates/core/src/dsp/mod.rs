//! Filtering, spectral estimation and autocorrelation.

pub mod autocorr;
pub mod band;
pub mod butterworth;
pub mod filtfilt;
pub mod spectra;
pub mod welch;

pub use autocorr::{autocorrelation, autocorrelation_curve};
pub use band::{band_isolate, band_isolate_segments, Band, BandSpec};
pub use butterworth::{design_butterworth, FilterKind, SosFilter};
pub use filtfilt::{filtfilt, sosfilt};
pub use spectra::{aggregate_spectra, speed_decile_spectra, spectra_csv, SessionSpectra, SpectrumRow};
pub use welch::{welch_psd, PsdEstimate, WelchAccumulator, WelchParams};

//! Short-time band-energy features.
//!
//! Power spectra from Hann-windowed frames are pooled into log-spaced
//! triangular bands (mel-like spacing on a plain log axis), log-compressed
//! and, at encode time, z-scored per band with statistics fitted on the
//! training singles.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};

const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub num_bands: usize,
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            frame_len: 512,
            hop: 256,
            num_bands: 32,
            f_min: 150.0,
            f_max: 3800.0,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_len < 8 || self.hop == 0 || self.num_bands == 0 {
            return Err(Error::Config(format!("invalid feature config {self:?}")));
        }
        if !(self.f_min > 0.0 && self.f_max > self.f_min) {
            return Err(Error::Config("need 0 < f_min < f_max".into()));
        }
        Ok(())
    }

    /// Band centre frequencies; band `k` spans `edges[k]..edges[k + 2]`.
    pub fn band_edges(&self) -> Vec<f64> {
        let n = self.num_bands + 2;
        (0..n)
            .map(|i| self.f_min * (self.f_max / self.f_min).powf(i as f64 / (n - 1) as f64))
            .collect()
    }

    pub fn band_centers(&self) -> Vec<f64> {
        let e = self.band_edges();
        e[1..=self.num_bands].to_vec()
    }
}

/// `F x T` matrix stored band-major: `values[band * frames + frame]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub bands: usize,
    pub frames: usize,
    pub values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn get(&self, band: usize, frame: usize) -> f64 {
        self.values[band * self.frames + frame]
    }

    pub fn band(&self, band: usize) -> &[f64] {
        &self.values[band * self.frames..(band + 1) * self.frames]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Triangular filterbank sampled at FFT bin frequencies.
#[derive(Debug, Clone)]
pub struct Filterbank {
    /// Per band: `(first_bin, weights)`.
    bands: Vec<(usize, Vec<f64>)>,
}

impl Filterbank {
    pub fn new(cfg: &FeatureConfig, sample_rate: u32) -> Result<Self> {
        cfg.validate()?;
        let nyquist = f64::from(sample_rate) / 2.0;
        if cfg.f_max > nyquist {
            return Err(Error::Config(format!(
                "f_max {} above Nyquist {nyquist}",
                cfg.f_max
            )));
        }
        let bin_hz = f64::from(sample_rate) / cfg.frame_len as f64;
        let num_bins = cfg.frame_len / 2 + 1;
        let edges = cfg.band_edges();
        let bands = (0..cfg.num_bands)
            .map(|k| {
                let (lo, mid, hi) = (edges[k], edges[k + 1], edges[k + 2]);
                let mut weights = vec![0.0; num_bins];
                for (b, w) in weights.iter_mut().enumerate() {
                    let f = b as f64 * bin_hz;
                    *w = if f > lo && f <= mid {
                        (f - lo) / (mid - lo)
                    } else if f > mid && f < hi {
                        (hi - f) / (hi - mid)
                    } else {
                        0.0
                    };
                }
                if weights.iter().all(|&w| w == 0.0) {
                    // Narrower than one bin: take the bin nearest the centre.
                    let nearest = ((mid / bin_hz).round() as usize).min(num_bins - 1);
                    weights[nearest] = 1.0;
                }
                let first = weights.iter().position(|&w| w > 0.0).unwrap_or(0);
                let last = weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
                (first, weights[first..=last].to_vec())
            })
            .collect();
        Ok(Self { bands })
    }

    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.bands
            .iter()
            .map(|(first, w)| w.iter().zip(&power[*first..]).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Reusable STFT state for one feature configuration and sample rate.
pub struct FeatureExtractor {
    cfg: FeatureConfig,
    sample_rate: u32,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    filterbank: Filterbank,
}

impl FeatureExtractor {
    pub fn new(cfg: &FeatureConfig, sample_rate: u32) -> Result<Self> {
        let filterbank = Filterbank::new(cfg, sample_rate)?;
        let n = cfg.frame_len;
        let window = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(n);
        Ok(Self {
            cfg: cfg.clone(),
            sample_rate,
            window,
            fft,
            filterbank,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    /// Raw (linear) band energies.
    pub fn band_energies(&self, w: &Waveform) -> Result<FeatureMatrix> {
        if w.sample_rate != self.sample_rate {
            return Err(Error::InvalidArgument(format!(
                "extractor built for {} Hz, clip is {} Hz",
                self.sample_rate, w.sample_rate
            )));
        }
        let n = self.cfg.frame_len;
        if w.len() < n {
            return Err(Error::InvalidArgument(format!(
                "clip of {} samples shorter than one {n}-sample frame",
                w.len()
            )));
        }
        let frames = (w.len() - n) / self.cfg.hop + 1;
        let bands = self.cfg.num_bands;
        let mut values = vec![0.0; bands * frames];
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let mut power = vec![0.0; n / 2 + 1];
        for t in 0..frames {
            let start = t * self.cfg.hop;
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = Complex::new(w.samples[start + i] * self.window[i], 0.0);
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr() / n as f64;
            }
            for (k, e) in self.filterbank.apply(&power).into_iter().enumerate() {
                values[k * frames + t] = e;
            }
        }
        Ok(FeatureMatrix {
            bands,
            frames,
            values,
        })
    }

    /// Log-compressed band energies.
    pub fn extract(&self, w: &Waveform) -> Result<FeatureMatrix> {
        let mut m = self.band_energies(w)?;
        m.values.iter_mut().for_each(|v| *v = (*v + LOG_FLOOR).ln());
        Ok(m)
    }
}

pub fn extract_features(w: &Waveform, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    FeatureExtractor::new(cfg, w.sample_rate)?.extract(w)
}

/// Per-band mean and standard deviation over every frame of a clip set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl BandStats {
    pub fn identity(bands: usize) -> Self {
        Self {
            mean: vec![0.0; bands],
            std: vec![1.0; bands],
        }
    }

    pub fn fit<'a>(mats: impl IntoIterator<Item = &'a FeatureMatrix>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for m in mats {
            if sum.is_empty() {
                sum = vec![0.0; m.bands];
                sq = vec![0.0; m.bands];
            } else if sum.len() != m.bands {
                return Err(Error::Shape("band counts differ across clips".into()));
            }
            for k in 0..m.bands {
                for &v in m.band(k) {
                    sum[k] += v;
                    sq[k] += v * v;
                }
            }
            count += m.frames;
        }
        if count == 0 {
            return Err(Error::Insufficient(
                "no frames to fit band statistics".into(),
            ));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n - m * m).max(0.0);
                if var > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn normalize(&self, m: &FeatureMatrix) -> Result<FeatureMatrix> {
        if m.bands != self.mean.len() {
            return Err(Error::Shape(format!(
                "matrix has {} bands, statistics {}",
                m.bands,
                self.mean.len()
            )));
        }
        let mut out = m.clone();
        for k in 0..m.bands {
            let (mu, sd) = (self.mean[k], self.std[k]);
            for v in &mut out.values[k * m.frames..(k + 1) * m.frames] {
                *v = (*v - mu) / sd;
            }
        }
        Ok(out)
    }
}

/// Temporal pooling to a `2F` vector: per-band frame mean followed by the
/// position-weighted mean `(1/T) Σ_t ((t + 1) / T) x_t`, which keeps
/// event order visible after pooling.
pub fn pool_temporal(m: &FeatureMatrix) -> Vec<f64> {
    let t = m.frames as f64;
    let mut out = Vec::with_capacity(2 * m.bands);
    for k in 0..m.bands {
        out.push(m.band(k).iter().sum::<f64>() / t);
    }
    for k in 0..m.bands {
        let weighted: f64 = m
            .band(k)
            .iter()
            .enumerate()
            .map(|(i, v)| (i as f64 + 1.0) / t * v)
            .sum();
        out.push(weighted / t);
    }
    out
}

//! Stationary field-noise processes: correlation kernels, spectral densities,
//! Karhunen-Loeve decomposition and Gaussian sample paths.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linalg::{symmetric_eigen, EigenOrder, RMatrix};

/// Relative cutoff used to count the rank of a noise kernel.
pub const NOISE_RANK_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    /// `R(t, t') = A^2 exp(-|t - t'| / alpha)`
    Exponential { alpha: f64 },
    /// Delta-correlated, discretized as `A^2 / dt` on the diagonal.
    White,
    /// Fully correlated in time.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    #[serde(flatten)]
    pub kind: NoiseKind,
    pub a_sq: f64,
}

impl NoiseModel {
    pub fn new(kind: NoiseKind, a_sq: f64) -> Result<Self> {
        let m = NoiseModel { kind, a_sq };
        m.validate()?;
        Ok(m)
    }

    pub fn exponential(alpha: f64, a_sq: f64) -> Result<Self> {
        Self::new(NoiseKind::Exponential { alpha }, a_sq)
    }

    pub fn white(a_sq: f64) -> Result<Self> {
        Self::new(NoiseKind::White, a_sq)
    }

    pub fn constant(a_sq: f64) -> Result<Self> {
        Self::new(NoiseKind::Constant, a_sq)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a_sq.is_finite() && self.a_sq >= 0.0) {
            return Err(Error::param("a_sq", format!("must be finite and >= 0, got {}", self.a_sq)));
        }
        if let NoiseKind::Exponential { alpha } = self.kind {
            if !(alpha.is_finite() && alpha > 0.0) {
                return Err(Error::param("alpha", format!("must be finite and > 0, got {alpha}")));
            }
        }
        Ok(())
    }

    pub fn alpha(&self) -> Option<f64> {
        match self.kind {
            NoiseKind::Exponential { alpha } => Some(alpha),
            _ => None,
        }
    }

    pub fn with_strength(self, a_sq: f64) -> Self {
        NoiseModel { a_sq, ..self }
    }

    pub fn label(&self) -> String {
        match self.kind {
            NoiseKind::Exponential { alpha } => format!("exponential(alpha={alpha})"),
            NoiseKind::White => "white".into(),
            NoiseKind::Constant => "constant".into(),
        }
    }
}

/// `R` as a function of the lag `m = |k - l|` on the grid.
pub fn lag_correlation(model: &NoiseModel, grid: TimeGrid) -> Vec<f64> {
    let n = grid.steps();
    let dt = grid.dt();
    let a2 = model.a_sq;
    match model.kind {
        NoiseKind::Exponential { alpha } => (0..n).map(|m| a2 * (-(m as f64) * dt / alpha).exp()).collect(),
        NoiseKind::White => {
            let mut r = vec![0.0; n];
            r[0] = a2 / dt;
            r
        }
        NoiseKind::Constant => vec![a2; n],
    }
}

pub fn correlation_matrix(model: &NoiseModel, grid: TimeGrid) -> RMatrix {
    let r = lag_correlation(model, grid);
    let n = grid.steps();
    RMatrix::from_fn(n, n, |k, l| r[k.abs_diff(l)])
}

/// Two-sided spectral density with `R(0) = (1/2 pi) int S(w) dw`.
pub fn psd(model: &NoiseModel, omega: f64) -> Result<f64> {
    match model.kind {
        NoiseKind::Exponential { alpha } => Ok(2.0 * model.a_sq * alpha / (1.0 + (alpha * omega).powi(2))),
        NoiseKind::White => Ok(model.a_sq),
        NoiseKind::Constant => {
            Err(Error::UnsupportedQuery("constant noise has a delta spectrum at omega = 0".into()))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseSpectrum {
    pub grid: TimeGrid,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// Normalized to `dt * sum u^2 = 1`.
    pub eigenfunctions: Vec<Vec<f64>>,
    pub rank: usize,
}

impl NoiseSpectrum {
    pub fn total(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    /// Smallest number of leading eigenpairs whose eigenvalues cover `fraction` of the total.
    pub fn coverage_count(&self, fraction: f64) -> usize {
        let total: f64 = self.eigenvalues.iter().map(|g| g.max(0.0)).sum();
        if total <= 0.0 {
            return 0;
        }
        let mut acc = 0.0;
        for (i, g) in self.eigenvalues.iter().enumerate() {
            acc += g.max(0.0);
            if acc >= fraction * total {
                return i + 1;
            }
        }
        self.eigenvalues.len()
    }

    /// `sum_j gamma_j u_j(t) u_j(t')`
    pub fn reconstruct(&self) -> RMatrix {
        let n = self.grid.steps();
        let mut m = RMatrix::zeros(n, n);
        for (g, u) in self.eigenvalues.iter().zip(&self.eigenfunctions) {
            for k in 0..n {
                let a = g * u[k];
                for l in 0..n {
                    m[(k, l)] += a * u[l];
                }
            }
        }
        m
    }
}

/// Eigendecomposition of the integral operator with kernel `R`.
pub fn noise_spectrum(model: &NoiseModel, grid: TimeGrid) -> Result<NoiseSpectrum> {
    model.validate()?;
    let dt = grid.dt();
    let eig = symmetric_eigen(correlation_matrix(model, grid) * dt, EigenOrder::DescendingValue)?;
    let scale = 1.0 / dt.sqrt();
    let eigenfunctions = (0..eig.values.len())
        .map(|j| eig.vectors.column(j).iter().map(|x| x * scale).collect())
        .collect();
    let gmax = eig.values.first().copied().unwrap_or(0.0);
    let rank = if gmax > 0.0 {
        eig.values.iter().filter(|&&g| g > NOISE_RANK_THRESHOLD * gmax).count()
    } else {
        0
    };
    Ok(NoiseSpectrum { grid, eigenvalues: eig.values, eigenfunctions, rank })
}

/// Reusable Gaussian path generator built from a kernel decomposition.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    steps: usize,
    modes: Vec<(f64, Vec<f64>)>,
}

impl NoiseSampler {
    pub fn new(model: &NoiseModel, grid: TimeGrid) -> Result<Self> {
        let spec = noise_spectrum(model, grid)?;
        Ok(Self::from_spectrum(&spec))
    }

    /// Keeps the eigenpairs counted in the rank; negative round-off eigenvalues are dropped.
    pub fn from_spectrum(spec: &NoiseSpectrum) -> Self {
        let modes = spec
            .eigenvalues
            .iter()
            .zip(&spec.eigenfunctions)
            .take(spec.rank)
            .filter(|(g, _)| **g > 0.0)
            .map(|(g, u)| (g.sqrt(), u.clone()))
            .collect();
        NoiseSampler { steps: spec.grid.steps(), modes }
    }

    pub fn sample(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(&mut rng)
    }

    pub fn sample_with(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut path = vec![0.0; self.steps];
        for (sg, u) in &self.modes {
            let xi: f64 = StandardNormal.sample(rng);
            let c = sg * xi;
            for (p, x) in path.iter_mut().zip(u) {
                *p += c * x;
            }
        }
        path
    }
}

pub fn sample_realization(model: &NoiseModel, grid: TimeGrid, seed: u64) -> Result<Vec<f64>> {
    Ok(NoiseSampler::new(model, grid)?.sample(seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    LowFrequency,
    MidFrequency,
    WhiteLike,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::LowFrequency => "low_frequency",
            Regime::MidFrequency => "mid_frequency",
            Regime::WhiteLike => "white_like",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeRule {
    pub band: (f64, f64),
    /// Share of spectral power below the band needed for `LowFrequency`.
    pub low_fraction: f64,
    /// `S(w_hi) / S(w_lo)` above which the spectrum counts as flat.
    pub flatness: f64,
}

impl Default for RegimeRule {
    fn default() -> Self {
        RegimeRule { band: (6.0, 50.0), low_fraction: 0.9, flatness: 0.85 }
    }
}

pub fn classify_regime(model: &NoiseModel, rule: &RegimeRule) -> Result<Regime> {
    let NoiseKind::Exponential { alpha } = model.kind else {
        return Err(Error::UnsupportedQuery(format!("regime of {} noise", model.label())));
    };
    let (lo, hi) = rule.band;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::param("band", format!("need 0 < w_lo < w_hi, got [{lo}, {hi}]")));
    }
    let below = 2.0 / std::f64::consts::PI * (alpha * lo).atan();
    if below > rule.low_fraction {
        return Ok(Regime::LowFrequency);
    }
    let ratio = (1.0 + (alpha * lo).powi(2)) / (1.0 + (alpha * hi).powi(2));
    if ratio > rule.flatness {
        return Ok(Regime::WhiteLike);
    }
    Ok(Regime::MidFrequency)
}

//! Second-order robustness measures `K_A` (additive noise `eps + d eps`) and
//! `K_M` (multiplicative noise `eps (1 + d eps)`), their spectral
//! decompositions, closed-form limits and a sampling oracle.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::landscape::{cost_j, hessian_frequency_with, HessianKernel, HessianSpectrum, TargetGate, NULLSPACE_THRESHOLD};
use crate::linalg::hs_norm;
use crate::noise::{classify_regime, lag_correlation, psd, NoiseKind, NoiseModel, NoiseSampler, NoiseSpectrum, Regime, RegimeRule};
use crate::system::{final_unitary, ControlField, QuantumSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseCoupling {
    Additive,
    Multiplicative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    TimeDomain,
    FrequencyDomain,
    ClosedFormLowFreq,
    ClosedFormWhite,
    MonteCarlo,
}

/// `f_c = dt sum_k eps_c(t_k)^2`
pub fn fluence(field: &ControlField) -> Vec<f64> {
    let dt = field.grid().dt();
    (0..field.channel_count()).map(|c| dt * field.channel(c).iter().map(|x| x * x).sum::<f64>()).collect()
}

fn check_grid(kern: &HessianKernel, model: &NoiseModel) -> Result<()> {
    model.validate()?;
    if kern.blocks.iter().any(|b| b.nrows() != kern.grid.steps()) {
        return Err(Error::DimensionMismatch { expected: kern.grid.steps(), found: kern.blocks[0].nrows() });
    }
    Ok(())
}

/// `(1/2) dt^2 sum_{k,l} H(k,l) [eps_k eps_l] R(k,l)` for each channel.
fn quadrature_per_channel(kern: &HessianKernel, field: Option<&ControlField>, model: &NoiseModel) -> Result<Vec<f64>> {
    check_grid(kern, model)?;
    if let Some(f) = field {
        kern.check_field(f)?;
    }
    let r = lag_correlation(model, kern.grid);
    let dt = kern.dt();
    Ok((0..kern.channel_count())
        .map(|ch| {
            let d = kern.diagonal_sums(ch, field.map(|f| f.channel(ch)));
            let off: f64 = d.iter().zip(&r).skip(1).map(|(a, b)| a * b).sum();
            0.5 * dt * dt * (d[0] * r[0] + 2.0 * off)
        })
        .collect())
}

pub fn k_additive_per_channel(kern: &HessianKernel, model: &NoiseModel) -> Result<Vec<f64>> {
    quadrature_per_channel(kern, None, model)
}

pub fn k_multiplicative_per_channel(
    kern: &HessianKernel,
    field: &ControlField,
    model: &NoiseModel,
) -> Result<Vec<f64>> {
    quadrature_per_channel(kern, Some(field), model)
}

/// Total over channels, each carrying independent noise with the same kernel.
pub fn k_additive(kern: &HessianKernel, model: &NoiseModel) -> Result<f64> {
    Ok(k_additive_per_channel(kern, model)?.iter().sum())
}

pub fn k_multiplicative(kern: &HessianKernel, field: &ControlField, model: &NoiseModel) -> Result<f64> {
    Ok(k_multiplicative_per_channel(kern, field, model)?.iter().sum())
}

/// Uniform frequency grid for `[0, w_max]` and whether to add the tail estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyQuadrature {
    pub omega_max: f64,
    pub d_omega: f64,
    pub tail_correction: bool,
}

impl FrequencyQuadrature {
    /// `w_max = max(20/alpha, 200)`, `dw = min(pi/T, 1/(10 alpha))`.
    pub fn for_alpha(alpha: f64, total_time: f64) -> Self {
        FrequencyQuadrature {
            omega_max: (20.0 / alpha).max(200.0),
            d_omega: (PI / total_time).min(0.1 / alpha),
            tail_correction: true,
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        let count = (self.omega_max / self.d_omega).ceil().max(1.0) as usize;
        let h = self.omega_max / count as f64;
        (0..=count).map(|i| i as f64 * h).collect()
    }
}

/// `(1/4 pi) int H(w) S(w) dw` by trapezoid quadrature over `[-w_max, w_max]`.
///
/// The discretized `H(w)` is periodic in `w` with period `2 pi / dt`, so the
/// part of the integral beyond `w_max` is estimated with its period average
/// `dt^2 sum_k H(k,k)` times the exact tail mass of `S`.
pub fn k_frequency_domain(kern: &HessianKernel, field: Option<&ControlField>, model: &NoiseModel) -> Result<f64> {
    let NoiseKind::Exponential { alpha } = model.kind else {
        return Err(Error::UnsupportedQuery(format!("frequency-domain K for {} noise", model.label())));
    };
    let quad = FrequencyQuadrature::for_alpha(alpha, kern.grid.total_time());
    k_frequency_domain_with(kern, field, model, &quad, Execution::Parallel)
}

pub fn k_frequency_domain_with(
    kern: &HessianKernel,
    field: Option<&ControlField>,
    model: &NoiseModel,
    quad: &FrequencyQuadrature,
    exec: Execution,
) -> Result<f64> {
    let NoiseKind::Exponential { alpha } = model.kind else {
        return Err(Error::UnsupportedQuery(format!("frequency-domain K for {} noise", model.label())));
    };
    check_grid(kern, model)?;
    if !(quad.omega_max > 0.0 && quad.d_omega > 0.0) {
        return Err(Error::param("frequency quadrature", "omega_max and d_omega must be positive"));
    }
    let nodes = quad.nodes();
    let h = nodes[1] - nodes[0];
    let hw = hessian_frequency_with(kern, field, &nodes, exec)?;
    let last = nodes.len() - 1;
    let mut half = 0.0;
    for (i, (&w, &hv)) in nodes.iter().zip(&hw).enumerate() {
        let wt = if i == 0 || i == last { 0.5 } else { 1.0 };
        half += wt * hv * psd(model, w)?;
    }
    let mut integral = 2.0 * half * h;
    if quad.tail_correction {
        let dt = kern.dt();
        let mean_h: f64 = (0..kern.channel_count())
            .map(|ch| kern.diagonal_sums(ch, field.map(|f| f.channel(ch)))[0])
            .sum::<f64>()
            * dt
            * dt;
        let tail_mass = 4.0 * model.a_sq * (PI / 2.0 - (alpha * quad.omega_max).atan());
        integral += mean_h * tail_mass;
    }
    Ok(integral / (4.0 * PI))
}

/// Which eigenpairs enter an overlap table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapTruncation {
    /// Hessian eigenvalues with `|lambda| > hessian_rel * max |lambda|`.
    pub hessian_rel: f64,
    /// Leading noise eigenpairs covering this share of `sum gamma_j`.
    pub noise_coverage: f64,
}

impl Default for OverlapTruncation {
    fn default() -> Self {
        OverlapTruncation { hessian_rel: NULLSPACE_THRESHOLD, noise_coverage: 0.999 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OverlapTable {
    pub coupling: NoiseCoupling,
    pub hessian_eigenvalues: Vec<f64>,
    pub hessian_channels: Vec<usize>,
    pub noise_eigenvalues: Vec<f64>,
    /// `coefficients[i][j]`
    pub coefficients: Vec<Vec<f64>>,
}

impl OverlapTable {
    /// `(1/2) sum_{i,j} lambda_i gamma_j C[i][j]`
    pub fn reconstructed_k(&self) -> f64 {
        0.5 * self
            .hessian_eigenvalues
            .iter()
            .zip(&self.coefficients)
            .map(|(l, row)| l * row.iter().zip(&self.noise_eigenvalues).map(|(c, g)| c * g).sum::<f64>())
            .sum::<f64>()
    }
}

pub fn overlap_coefficients(
    hspec: &HessianSpectrum,
    nspec: &NoiseSpectrum,
    field: Option<&ControlField>,
) -> Result<OverlapTable> {
    overlap_coefficients_with(hspec, nspec, field, &OverlapTruncation::default())
}

pub fn overlap_coefficients_with(
    hspec: &HessianSpectrum,
    nspec: &NoiseSpectrum,
    field: Option<&ControlField>,
    trunc: &OverlapTruncation,
) -> Result<OverlapTable> {
    if !hspec.grid.matches(&nspec.grid) {
        return Err(Error::GridMismatch {
            expected_t: hspec.grid.total_time(),
            expected_dt: hspec.grid.dt(),
            expected_channels: hspec.channel_count,
            found_t: nspec.grid.total_time(),
            found_dt: nspec.grid.dt(),
            found_channels: hspec.channel_count,
        });
    }
    if let Some(f) = field {
        if !hspec.grid.matches(f.grid()) || f.channel_count() != hspec.channel_count {
            return Err(Error::GridMismatch {
                expected_t: hspec.grid.total_time(),
                expected_dt: hspec.grid.dt(),
                expected_channels: hspec.channel_count,
                found_t: f.grid().total_time(),
                found_dt: f.grid().dt(),
                found_channels: f.channel_count(),
            });
        }
    }
    let dt = hspec.grid.dt();
    let cut = trunc.hessian_rel * hspec.max_abs();
    let keep: Vec<usize> = (0..hspec.eigenvalues.len()).filter(|&i| hspec.eigenvalues[i].abs() > cut).collect();
    let m = nspec.coverage_count(trunc.noise_coverage);

    let coefficients = keep
        .iter()
        .map(|&i| {
            let ch = hspec.channels[i];
            let v: Vec<f64> = match field {
                Some(f) => hspec.eigenfunctions[i].iter().zip(f.channel(ch)).map(|(a, e)| a * e).collect(),
                None => hspec.eigenfunctions[i].clone(),
            };
            nspec.eigenfunctions[..m]
                .iter()
                .map(|u| {
                    let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                    (dt * p).powi(2)
                })
                .collect()
        })
        .collect();

    Ok(OverlapTable {
        coupling: if field.is_some() { NoiseCoupling::Multiplicative } else { NoiseCoupling::Additive },
        hessian_eigenvalues: keep.iter().map(|&i| hspec.eigenvalues[i]).collect(),
        hessian_channels: keep.iter().map(|&i| hspec.channels[i]).collect(),
        noise_eigenvalues: nspec.eigenvalues[..m].to_vec(),
        coefficients,
    })
}

/// Time-independent noise of variance `r_const`:
/// `K = (R/2) sum_i lambda_i (dt sum_k v_i(t_k) [eps(t_k)])^2` over all eigenpairs.
pub fn k_low_frequency(hspec: &HessianSpectrum, field: Option<&ControlField>, r_const: f64) -> Result<f64> {
    if let Some(f) = field {
        if !hspec.grid.matches(f.grid()) || f.channel_count() != hspec.channel_count {
            return Err(Error::GridMismatch {
                expected_t: hspec.grid.total_time(),
                expected_dt: hspec.grid.dt(),
                expected_channels: hspec.channel_count,
                found_t: f.grid().total_time(),
                found_dt: f.grid().dt(),
                found_channels: f.channel_count(),
            });
        }
    }
    let dt = hspec.grid.dt();
    let total: f64 = hspec
        .eigenvalues
        .iter()
        .zip(&hspec.eigenfunctions)
        .zip(&hspec.channels)
        .map(|((lam, v), &ch)| {
            let s: f64 = match field {
                Some(f) => v.iter().zip(f.channel(ch)).map(|(a, e)| a * e).sum(),
                None => v.iter().sum(),
            };
            lam * (dt * s).powi(2)
        })
        .sum();
    Ok(0.5 * r_const * total)
}

/// White-noise limits at an exact optimum, per channel:
/// `K_A = A^2 T |mu|^2 / (4N)` and `K_M = A^2 |mu|^2 f / (4N)`.
pub fn k_white_closed_form(sys: &QuantumSystem, field: &ControlField, a_sq: f64) -> Vec<(f64, f64)> {
    let n = sys.dim() as f64;
    let t = field.grid().total_time();
    fluence(field)
        .iter()
        .zip(sys.dipoles())
        .map(|(f, mu)| {
            let norm_sq = hs_norm(mu).powi(2);
            (a_sq * t * norm_sq / (4.0 * n), a_sq * norm_sq * f / (4.0 * n))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Mean fidelity loss `E[J(eps + d eps)] - J(eps)` (or with `eps (1 + d eps)`)
/// over independently seeded noise paths.
#[allow(clippy::too_many_arguments)]
pub fn k_monte_carlo(
    sys: &QuantumSystem,
    w: &TargetGate,
    field: &ControlField,
    model: &NoiseModel,
    coupling: NoiseCoupling,
    n_samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<MonteCarloEstimate> {
    if n_samples < 2 {
        return Err(Error::param("samples", "need at least 2 noise paths"));
    }
    let grid = *field.grid();
    let sampler = NoiseSampler::new(model, grid)?;
    let j0 = cost_j(w, &final_unitary(sys, field)?)?;
    let channels = field.channel_count();
    let losses: Vec<Result<f64>> = map_indexed(exec, n_samples, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut samples = field.samples().to_vec();
        for ch in 0..channels {
            let path = sampler.sample_with(&mut rng);
            let seg = &mut samples[ch * grid.steps()..(ch + 1) * grid.steps()];
            for (x, d) in seg.iter_mut().zip(&path) {
                match coupling {
                    NoiseCoupling::Additive => *x += d,
                    NoiseCoupling::Multiplicative => *x *= 1.0 + d,
                }
            }
        }
        let noisy = ControlField::new(grid, channels, samples)?;
        Ok(cost_j(w, &final_unitary(sys, &noisy)?)? - j0)
    });
    let losses: Vec<f64> = losses.into_iter().collect::<Result<_>>()?;
    let n = losses.len() as f64;
    let mean = losses.iter().sum::<f64>() / n;
    let var = losses.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(MonteCarloEstimate { estimate: mean, std_error: (var / n).sqrt(), samples: losses.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelRobustness {
    pub channel: usize,
    pub k_add: f64,
    pub k_mult: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub method: Method,
    pub noise: NoiseModel,
    pub k_additive: f64,
    pub k_multiplicative: f64,
    pub per_channel: Vec<ChannelRobustness>,
    pub fluence: Vec<f64>,
    pub regime: Option<Regime>,
}

impl RobustnessReport {
    fn assemble(method: Method, noise: &NoiseModel, field: &ControlField, per: Vec<(f64, f64)>) -> Self {
        let per_channel: Vec<ChannelRobustness> = per
            .into_iter()
            .enumerate()
            .map(|(channel, (k_add, k_mult))| ChannelRobustness { channel, k_add, k_mult })
            .collect();
        RobustnessReport {
            method,
            noise: *noise,
            k_additive: per_channel.iter().map(|c| c.k_add).sum(),
            k_multiplicative: per_channel.iter().map(|c| c.k_mult).sum(),
            per_channel,
            fluence: fluence(field),
            regime: classify_regime(noise, &RegimeRule::default()).ok(),
        }
    }
}

/// Quadrature report (time domain) for one noise model.
pub fn robustness_report(kern: &HessianKernel, field: &ControlField, noise: &NoiseModel) -> Result<RobustnessReport> {
    let add = k_additive_per_channel(kern, noise)?;
    let mult = k_multiplicative_per_channel(kern, field, noise)?;
    Ok(RobustnessReport::assemble(Method::TimeDomain, noise, field, add.into_iter().zip(mult).collect()))
}

/// Frequency-domain report; per-channel values come from single-channel kernels.
pub fn robustness_report_frequency(
    kern: &HessianKernel,
    field: &ControlField,
    noise: &NoiseModel,
) -> Result<RobustnessReport> {
    kern.check_field(field)?;
    let mut per = Vec::with_capacity(kern.channel_count());
    for ch in 0..kern.channel_count() {
        let sub = HessianKernel { grid: kern.grid, blocks: vec![kern.blocks[ch].clone()] };
        let f = ControlField::new(kern.grid, 1, field.channel(ch).to_vec())?;
        per.push((k_frequency_domain(&sub, None, noise)?, k_frequency_domain(&sub, Some(&f), noise)?));
    }
    Ok(RobustnessReport::assemble(Method::FrequencyDomain, noise, field, per))
}

/// Constant-noise closed form from the Hessian spectrum.
pub fn robustness_report_low_frequency(
    hspec: &HessianSpectrum,
    field: &ControlField,
    noise: &NoiseModel,
) -> Result<RobustnessReport> {
    let mut per = Vec::with_capacity(hspec.channel_count);
    for ch in 0..hspec.channel_count {
        let sub = single_channel_spectrum(hspec, ch);
        let f = ControlField::new(hspec.grid, 1, field.channel(ch).to_vec())?;
        per.push((k_low_frequency(&sub, None, noise.a_sq)?, k_low_frequency(&sub, Some(&f), noise.a_sq)?));
    }
    Ok(RobustnessReport::assemble(Method::ClosedFormLowFreq, noise, field, per))
}

pub fn robustness_report_white(sys: &QuantumSystem, field: &ControlField, noise: &NoiseModel) -> RobustnessReport {
    RobustnessReport::assemble(Method::ClosedFormWhite, noise, field, k_white_closed_form(sys, field, noise.a_sq))
}

fn single_channel_spectrum(hspec: &HessianSpectrum, ch: usize) -> HessianSpectrum {
    let idx: Vec<usize> = (0..hspec.channels.len()).filter(|&i| hspec.channels[i] == ch).collect();
    HessianSpectrum {
        grid: hspec.grid,
        channel_count: 1,
        eigenvalues: idx.iter().map(|&i| hspec.eigenvalues[i]).collect(),
        eigenfunctions: idx.iter().map(|&i| hspec.eigenfunctions[i].clone()).collect(),
        channels: vec![0; idx.len()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use crate::landscape::{hessian, hessian_spectrum};
    use crate::noise::{correlation_matrix, noise_spectrum};
    use crate::system::{build_one_qubit, propagate};
    use approx::assert_relative_eq;

    fn setup(seed: u64) -> (QuantumSystem, TargetGate, ControlField, HessianKernel) {
        use rand::Rng;
        let sys = build_one_qubit(20.0).unwrap();
        let grid = TimeGrid::new(1.0, 0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = (0..grid.steps()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let field = ControlField::new(grid, 1, s).unwrap();
        let w = TargetGate::hadamard();
        let kern = hessian(&w, &propagate(&sys, &field).unwrap()).unwrap();
        (sys, w, field, kern)
    }

    fn direct(kern: &HessianKernel, weight: Option<&[f64]>, model: &NoiseModel) -> f64 {
        let r = correlation_matrix(model, kern.grid);
        let dt = kern.dt();
        let b = &kern.blocks[0];
        let n = b.nrows();
        let mut acc = 0.0;
        for k in 0..n {
            for l in 0..n {
                let e = weight.map_or(1.0, |e| e[k] * e[l]);
                acc += b[(k, l)] * r[(k, l)] * e;
            }
        }
        0.5 * dt * dt * acc
    }

    #[test]
    fn quadrature_matches_direct_double_sum() {
        let (_, _, field, kern) = setup(3);
        for model in [
            NoiseModel::exponential(0.1, 1e-4).unwrap(),
            NoiseModel::white(1e-4).unwrap(),
            NoiseModel::constant(1e-4).unwrap(),
        ] {
            assert_relative_eq!(k_additive(&kern, &model).unwrap(), direct(&kern, None, &model), max_relative = 1e-10);
            assert_relative_eq!(
                k_multiplicative(&kern, &field, &model).unwrap(),
                direct(&kern, Some(field.channel(0)), &model),
                max_relative = 1e-10
            );
        }
        let zero = NoiseModel::exponential(0.1, 0.0).unwrap();
        assert_eq!(k_additive(&kern, &zero).unwrap(), 0.0);
        let zf = ControlField::zeros(*field.grid(), 1);
        assert_eq!(k_multiplicative(&kern, &zf, &NoiseModel::exponential(0.1, 1e-4).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn linear_in_strength() {
        let (_, _, field, kern) = setup(4);
        let m = NoiseModel::exponential(0.3, 1e-4).unwrap();
        let a = k_additive(&kern, &m).unwrap();
        let b = k_additive(&kern, &m.with_strength(2e-4)).unwrap();
        assert_relative_eq!(b, 2.0 * a, max_relative = 1e-14);
        let fa = k_frequency_domain(&kern, Some(&field), &m).unwrap();
        let fb = k_frequency_domain(&kern, Some(&field), &m.with_strength(2e-4)).unwrap();
        assert_relative_eq!(fb, 2.0 * fa, max_relative = 1e-14);
    }

    #[test]
    fn frequency_domain_agrees_with_time_domain() {
        let (_, _, field, kern) = setup(5);
        for alpha in [0.01, 0.1, 1.0, 10.0] {
            let m = NoiseModel::exponential(alpha, 1e-4).unwrap();
            let t = k_additive(&kern, &m).unwrap();
            let f = k_frequency_domain(&kern, None, &m).unwrap();
            assert!((t - f).abs() < 0.01 * t.abs(), "alpha {alpha}: {t} vs {f}");
            let t = k_multiplicative(&kern, &field, &m).unwrap();
            let f = k_frequency_domain(&kern, Some(&field), &m).unwrap();
            assert!((t - f).abs() < 0.01 * t.abs(), "alpha {alpha}: {t} vs {f}");
        }
        assert!(k_frequency_domain(&kern, None, &NoiseModel::white(1.0).unwrap()).is_err());
    }

    #[test]
    fn low_frequency_closed_form_is_exact_for_constant_noise() {
        let (_, _, field, kern) = setup(6);
        let hspec = hessian_spectrum(&kern).unwrap();
        let c = NoiseModel::constant(1e-4).unwrap();
        assert_relative_eq!(
            k_low_frequency(&hspec, None, 1e-4).unwrap(),
            k_additive(&kern, &c).unwrap(),
            max_relative = 1e-9
        );
        assert_relative_eq!(
            k_low_frequency(&hspec, Some(&field), 1e-4).unwrap(),
            k_multiplicative(&kern, &field, &c).unwrap(),
            max_relative = 1e-9
        );
    }

    #[test]
    fn overlap_table_properties() {
        let (_, _, field, kern) = setup(7);
        let hspec = hessian_spectrum(&kern).unwrap();
        let m = NoiseModel::exponential(0.1, 1e-4).unwrap();
        let nspec = noise_spectrum(&m, kern.grid).unwrap();
        let all = OverlapTruncation { hessian_rel: 0.0, noise_coverage: 1.0 };
        let table = overlap_coefficients_with(&hspec, &nspec, None, &all).unwrap();
        for row in &table.coefficients {
            assert!(row.iter().all(|&c| c >= 0.0));
            assert!(row.iter().sum::<f64>() <= 1.0 + 1e-6);
        }
        assert_relative_eq!(table.reconstructed_k(), k_additive(&kern, &m).unwrap(), max_relative = 1e-8);
        let mt = overlap_coefficients_with(&hspec, &nspec, Some(&field), &all).unwrap();
        assert_eq!(mt.coupling, NoiseCoupling::Multiplicative);
        assert_relative_eq!(mt.reconstructed_k(), k_multiplicative(&kern, &field, &m).unwrap(), max_relative = 1e-8);

        // self-overlap of a Hessian eigenfunction is one
        let self_spec = NoiseSpectrum {
            grid: kern.grid,
            eigenvalues: vec![1.0, 1.0],
            eigenfunctions: vec![hspec.eigenfunctions[0].clone(), hspec.eigenfunctions[1].clone()],
            rank: 2,
        };
        let t = overlap_coefficients_with(&hspec, &self_spec, None, &all).unwrap();
        assert_relative_eq!(t.coefficients[0][0], 1.0, max_relative = 1e-10);
        assert!(t.coefficients[0][1] < 1e-20);
    }

    #[test]
    fn white_closed_form_at_any_field_scales_with_one_minus_2j() {
        let (sys, w, field, kern) = setup(8);
        let j = cost_j(&w, &final_unitary(&sys, &field).unwrap()).unwrap();
        let white = NoiseModel::white(1e-4).unwrap();
        let cf = k_white_closed_form(&sys, &field, 1e-4);
        assert_relative_eq!(cf[0].0, 6.25e-6, max_relative = 1e-14);
        assert_relative_eq!(k_additive(&kern, &white).unwrap(), cf[0].0 * (1.0 - 2.0 * j), max_relative = 1e-10);
        assert_relative_eq!(
            k_multiplicative(&kern, &field, &white).unwrap(),
            cf[0].1 * (1.0 - 2.0 * j),
            max_relative = 1e-10
        );
    }

    #[test]
    fn monte_carlo_degenerate_and_deterministic() {
        let (sys, w, field, _) = setup(9);
        let zero = NoiseModel::exponential(0.1, 0.0).unwrap();
        let est = k_monte_carlo(&sys, &w, &field, &zero, NoiseCoupling::Additive, 16, 1, Execution::Sequential).unwrap();
        assert_eq!(est.estimate, 0.0);
        let m = NoiseModel::exponential(0.1, 1e-4).unwrap();
        let a = k_monte_carlo(&sys, &w, &field, &m, NoiseCoupling::Multiplicative, 32, 5, Execution::Sequential).unwrap();
        let b = k_monte_carlo(&sys, &w, &field, &m, NoiseCoupling::Multiplicative, 32, 5, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fluence_values() {
        let grid = TimeGrid::new(1.0, 0.01).unwrap();
        assert_relative_eq!(fluence(&ControlField::constant(grid, 2, 3.0).unwrap())[1], 9.0, max_relative = 1e-12);
        assert_eq!(fluence(&ControlField::zeros(grid, 1)), vec![0.0]);
    }
}

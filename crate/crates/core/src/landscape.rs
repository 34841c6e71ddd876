//! Gate cost, its gradient, and the Hessian kernel of the control landscape.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::grid::TimeGrid;
use crate::linalg::{
    c, determinant, hs_norm, symmetric_eigen, trace_of_product, unitarity_error, CMatrix,
    EigenOrder, RMatrix,
};
use crate::system::{ControlField, PropagationResult};

/// Default relative threshold separating curvature directions from the nullspace.
pub const NULLSPACE_THRESHOLD: f64 = 1e-6;

/// Target unitary, required to lie in SU(N).
#[derive(Debug, Clone, PartialEq)]
pub struct TargetGate {
    w: CMatrix,
    label: String,
}

impl TargetGate {
    pub fn new(w: CMatrix, label: impl Into<String>) -> Result<Self> {
        let n = w.nrows();
        if n == 0 || w.ncols() != n {
            return Err(Error::InvalidInput("target gate must be square".into()));
        }
        let err = unitarity_error(&w);
        if err >= 1e-12 {
            return Err(Error::InvalidInput(format!("target gate is not unitary (error {err:.3e})")));
        }
        let det = determinant(&w);
        if (det - c(1.0)).norm() >= 1e-10 {
            return Err(Error::InvalidInput(format!(
                "target gate is not in SU({n}): det = {:.6}{:+.6}i",
                det.re, det.im
            )));
        }
        Ok(Self { w, label: label.into() })
    }

    /// `e^{i pi/2} / sqrt(2) [[1, 1], [1, -1]]`.
    pub fn hadamard() -> Self {
        let s = Complex64::from_polar(std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_PI_2);
        let w = CMatrix::from_row_slice(2, 2, &[s, s, s, -s]);
        Self::new(w, "hadamard").expect("Hadamard with phase is in SU(2)")
    }

    /// `e^{i pi/4}` times the CNOT permutation (control on the first qubit).
    pub fn cnot() -> Self {
        let p = Complex64::from_polar(1.0, std::f64::consts::FRAC_PI_4);
        let mut w = CMatrix::zeros(4, 4);
        w[(0, 0)] = p;
        w[(1, 1)] = p;
        w[(2, 3)] = p;
        w[(3, 2)] = p;
        Self::new(w, "cnot").expect("phased CNOT is in SU(4)")
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.w
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }
}

/// `J = 1/2 - Re Tr[W^dag U] / 2N`, evaluated as `||W - U||^2 / 4N`, which
/// is the same quantity for unitary `U` but keeps full relative precision
/// near `J = 0`.
pub fn cost_j(w: &TargetGate, u_final: &CMatrix) -> Result<f64> {
    let n = w.dim();
    if u_final.nrows() != n || u_final.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, found: u_final.nrows() });
    }
    let d = hs_norm(&(w.matrix() - u_final));
    Ok((d * d / (4.0 * n as f64)).clamp(0.0, 1.0))
}

fn overlap_operator(w: &TargetGate, prop: &PropagationResult) -> Result<CMatrix> {
    if prop.dim != w.dim() {
        return Err(Error::DimensionMismatch { expected: w.dim(), found: prop.dim });
    }
    Ok(w.matrix().adjoint() * prop.u_final())
}

/// `g(t_k) = -(1/2N) Im Tr[W^dag U(T) mu_c(t_k)]` on every sample.
///
/// `mu_c(t_k)` is the step-averaged Heisenberg dipole, so `g_k dt` is the
/// exact derivative of the discretized `J` with respect to sample `k`.
pub fn gradient(w: &TargetGate, prop: &PropagationResult, channel: usize) -> Result<Vec<f64>> {
    let x = overlap_operator(w, prop)?;
    let mus = prop
        .mu_step_avg
        .get(channel)
        .ok_or(Error::ChannelOutOfRange { channel, count: prop.mu_step_avg.len() })?;
    let scale = -1.0 / (2.0 * w.dim() as f64);
    Ok(mus.iter().map(|mu| scale * trace_of_product(&x, mu).im).collect())
}

/// Gradients of all channels, channel-major.
pub fn gradient_all(w: &TargetGate, prop: &PropagationResult) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for ch in 0..prop.mu_step_avg.len() {
        out.extend(gradient(w, prop, ch)?);
    }
    Ok(out)
}

/// Discretized Hessian kernel, one symmetric `n x n` block per channel.
#[derive(Debug, Clone)]
pub struct HessianKernel {
    pub grid: TimeGrid,
    pub blocks: Vec<RMatrix>,
}

impl HessianKernel {
    pub fn channel_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt()
    }

    /// `dt * sum_k H(t_k, t_k)` per channel.
    pub fn traces(&self) -> Vec<f64> {
        self.blocks.iter().map(|b| b.diagonal().sum() * self.dt()).collect()
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.blocks.iter().flat_map(|b| b.iter()).fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// Sums along the `m`-th superdiagonal of the (optionally field-weighted)
    /// block, `d(m) = sum_k H(k, k+m) [eps_k eps_{k+m}]`.
    pub fn diagonal_sums(&self, channel: usize, weight: Option<&[f64]>) -> Vec<f64> {
        let b = &self.blocks[channel];
        let n = b.nrows();
        (0..n)
            .map(|m| {
                (0..n - m)
                    .map(|k| {
                        let h = b[(k, k + m)];
                        match weight {
                            Some(e) => h * e[k] * e[k + m],
                            None => h,
                        }
                    })
                    .sum()
            })
            .collect()
    }

    pub(crate) fn check_field(&self, field: &ControlField) -> Result<()> {
        if !self.grid.matches(field.grid()) || field.channel_count() != self.channel_count() {
            return Err(Error::GridMismatch {
                expected_t: self.grid.total_time(),
                expected_dt: self.grid.dt(),
                expected_channels: self.channel_count(),
                found_t: field.grid().total_time(),
                found_dt: field.grid().dt(),
                found_channels: field.channel_count(),
            });
        }
        Ok(())
    }
}

/// `H(t_k, t_l) = (1/2N) Re Tr[W^dag U(T) mu(t_l) mu(t_k)]` for `t_l >= t_k`,
/// mirrored below the diagonal.
pub fn hessian(w: &TargetGate, prop: &PropagationResult) -> Result<HessianKernel> {
    hessian_with(w, prop, Execution::Parallel)
}

pub fn hessian_with(
    w: &TargetGate,
    prop: &PropagationResult,
    exec: Execution,
) -> Result<HessianKernel> {
    let x = overlap_operator(w, prop)?;
    let grid = prop.grid;
    let n = grid.steps();
    if prop.mu_heis.iter().any(|m| m.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: prop.mu_heis.first().map_or(0, Vec::len),
        });
    }
    let scale = 1.0 / (2.0 * w.dim() as f64);
    let blocks = prop
        .mu_heis
        .iter()
        .map(|mus| {
            let xm: Vec<CMatrix> = mus.iter().map(|m| &x * m).collect();
            let rows = map_indexed(exec, n, |k| {
                (k..n).map(|l| scale * trace_of_product(&xm[l], &mus[k]).re).collect::<Vec<f64>>()
            });
            let mut b = RMatrix::zeros(n, n);
            for (k, row) in rows.into_iter().enumerate() {
                for (off, v) in row.into_iter().enumerate() {
                    b[(k, k + off)] = v;
                    b[(k + off, k)] = v;
                }
            }
            b
        })
        .collect();
    Ok(HessianKernel { grid, blocks })
}

/// Full two-field Hessian over the stacked sample space, cross blocks
/// `d2J / d eps_c(t) d eps_c'(t')` included, scaled by `dt` (operator form).
pub fn joint_hessian_operator(w: &TargetGate, prop: &PropagationResult) -> Result<RMatrix> {
    let x = overlap_operator(w, prop)?;
    let n = prop.grid.steps();
    let channels = prop.mu_heis.len();
    let scale = prop.grid.dt() / (2.0 * w.dim() as f64);
    let size = channels * n;
    let xm: Vec<Vec<CMatrix>> =
        prop.mu_heis.iter().map(|mus| mus.iter().map(|m| &x * m).collect()).collect();
    let mut out = RMatrix::zeros(size, size);
    for a in 0..channels {
        for b in 0..channels {
            for k in 0..n {
                for l in k..n {
                    // later time on the left
                    let mut v = trace_of_product(&xm[b][l], &prop.mu_heis[a][k]).re;
                    if l == k && a != b {
                        v = 0.5 * (v + trace_of_product(&xm[a][k], &prop.mu_heis[b][l]).re);
                    }
                    out[(a * n + k, b * n + l)] = scale * v;
                    out[(b * n + l, a * n + k)] = scale * v;
                }
            }
        }
    }
    Ok(out)
}

/// Eigenvalues of [`joint_hessian_operator`] above `rel * max |lambda|`.
pub fn joint_hessian_rank(w: &TargetGate, prop: &PropagationResult, rel: f64) -> Result<usize> {
    let op = joint_hessian_operator(w, prop)?;
    if op.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("joint Hessian has non-finite entries".into()));
    }
    let values = op.symmetric_eigenvalues();
    let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(values.iter().filter(|v| v.abs() > rel * max).count())
}

/// Eigenpairs of the integral operator `f -> int H(., t') f(t') dt'`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HessianSpectrum {
    pub grid: TimeGrid,
    pub channel_count: usize,
    /// Sorted by descending magnitude.
    pub eigenvalues: Vec<f64>,
    /// `eigenfunctions[i]` lives on channel `channels[i]`; normalized to `dt * sum v^2 = 1`.
    pub eigenfunctions: Vec<Vec<f64>>,
    pub channels: Vec<usize>,
}

impl HessianSpectrum {
    pub fn max_abs(&self) -> f64 {
        self.eigenvalues.first().map_or(0.0, |x| x.abs())
    }

    /// Number of eigenvalues with `|lambda| > rel * max |lambda|`.
    pub fn rank(&self, rel: f64) -> usize {
        let cut = rel * self.max_abs();
        self.eigenvalues.iter().filter(|l| l.abs() > cut).count()
    }

    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Rebuilds the kernel block of one channel from all of its eigenpairs.
    pub fn reconstruct(&self, channel: usize) -> RMatrix {
        let n = self.grid.steps();
        let mut m = RMatrix::zeros(n, n);
        for ((lam, v), &ch) in self.eigenvalues.iter().zip(&self.eigenfunctions).zip(&self.channels) {
            if ch != channel {
                continue;
            }
            for k in 0..n {
                let a = lam * v[k];
                for l in 0..n {
                    m[(k, l)] += a * v[l];
                }
            }
        }
        m
    }
}

/// Decomposes each channel block (the two-channel operator is block diagonal)
/// and merges the eigenpairs by descending magnitude.
pub fn hessian_spectrum(kern: &HessianKernel) -> Result<HessianSpectrum> {
    let dt = kern.dt();
    let inv_sqrt_dt = 1.0 / dt.sqrt();
    let mut pairs: Vec<(f64, Vec<f64>, usize)> = Vec::new();
    for (ch, block) in kern.blocks.iter().enumerate() {
        if block.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("Hessian kernel has non-finite entries".into()));
        }
        let eig = symmetric_eigen(block * dt, EigenOrder::DescendingMagnitude)?;
        for (j, &lam) in eig.values.iter().enumerate() {
            let v = eig.vectors.column(j).iter().map(|x| x * inv_sqrt_dt).collect();
            pairs.push((lam, v, ch));
        }
    }
    pairs.sort_by(|a, b| b.0.abs().total_cmp(&a.0.abs()));
    let mut spec = HessianSpectrum {
        grid: kern.grid,
        channel_count: kern.channel_count(),
        eigenvalues: Vec::with_capacity(pairs.len()),
        eigenfunctions: Vec::with_capacity(pairs.len()),
        channels: Vec::with_capacity(pairs.len()),
    };
    for (lam, v, ch) in pairs {
        spec.eigenvalues.push(lam);
        spec.eigenfunctions.push(v);
        spec.channels.push(ch);
    }
    Ok(spec)
}

/// `sum_m a_m cos(m theta)` with the phase advanced by repeated rotation.
pub(crate) fn cosine_series(a: &[f64], theta: f64) -> f64 {
    let step = Complex64::from_polar(1.0, theta);
    let mut z = Complex64::new(1.0, 0.0);
    let mut acc = 0.0;
    for (m, &am) in a.iter().enumerate() {
        if m % 64 == 0 {
            // re-anchor to keep round-off from accumulating
            z = Complex64::from_polar(1.0, theta * m as f64);
        }
        acc += am * z.re;
        z *= step;
    }
    acc
}

/// `H(omega) = dt^2 sum_{k,l} H(t_k, t_l) [eps_k eps_l] cos(omega (t_k - t_l))`,
/// summed over channels.
pub fn hessian_frequency(
    kern: &HessianKernel,
    field: Option<&ControlField>,
    omega_grid: &[f64],
) -> Result<Vec<f64>> {
    hessian_frequency_with(kern, field, omega_grid, Execution::Parallel)
}

pub fn hessian_frequency_with(
    kern: &HessianKernel,
    field: Option<&ControlField>,
    omega_grid: &[f64],
    exec: Execution,
) -> Result<Vec<f64>> {
    if omega_grid.is_empty() {
        return Err(Error::InvalidInput("empty frequency grid".into()));
    }
    if let Some(f) = field {
        kern.check_field(f)?;
    }
    let dt = kern.dt();
    // d(0) + 2 sum_{m>0} d(m) cos(m omega dt), all channels folded together
    let mut coeffs = vec![0.0; kern.grid.steps()];
    for ch in 0..kern.channel_count() {
        let d = kern.diagonal_sums(ch, field.map(|f| f.channel(ch)));
        for (m, v) in d.into_iter().enumerate() {
            coeffs[m] += if m == 0 { v } else { 2.0 * v };
        }
    }
    Ok(map_indexed(exec, omega_grid.len(), |i| dt * dt * cosine_series(&coeffs, omega_grid[i] * dt)))
}

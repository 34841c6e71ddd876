//! Qubit Hamiltonians, control fields and piecewise-constant propagation.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linalg::{
    self, c, hermitian_eigen, hermiticity_error, identity, kron, pauli_x, pauli_y, pauli_z,
    propagator_from_eigen, CMatrix,
};

const HERMITIAN_TOL: f64 = 1e-12;

/// Drift Hamiltonian plus one dipole coupling per control channel.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumSystem {
    h0: CMatrix,
    dipoles: Vec<CMatrix>,
}

impl QuantumSystem {
    pub fn new(h0: CMatrix, dipoles: Vec<CMatrix>) -> Result<Self> {
        let n = h0.nrows();
        if n == 0 || h0.ncols() != n {
            return Err(Error::InvalidInput("drift Hamiltonian must be a non-empty square matrix".into()));
        }
        if dipoles.is_empty() {
            return Err(Error::InvalidInput("at least one control channel is required".into()));
        }
        if hermiticity_error(&h0) > HERMITIAN_TOL * (1.0 + linalg::hs_norm(&h0)) {
            return Err(Error::InvalidInput("drift Hamiltonian is not Hermitian".into()));
        }
        for (k, mu) in dipoles.iter().enumerate() {
            if mu.nrows() != n || mu.ncols() != n {
                return Err(Error::DimensionMismatch { expected: n, found: mu.nrows() });
            }
            if hermiticity_error(mu) > HERMITIAN_TOL * (1.0 + linalg::hs_norm(mu)) {
                return Err(Error::InvalidInput(format!("dipole {k} is not Hermitian")));
            }
        }
        Ok(Self { h0, dipoles })
    }

    pub fn dim(&self) -> usize {
        self.h0.nrows()
    }

    pub fn channel_count(&self) -> usize {
        self.dipoles.len()
    }

    pub fn h0(&self) -> &CMatrix {
        &self.h0
    }

    pub fn dipoles(&self) -> &[CMatrix] {
        &self.dipoles
    }

    pub fn dipole(&self, channel: usize) -> Result<&CMatrix> {
        self.dipoles
            .get(channel)
            .ok_or(Error::ChannelOutOfRange { channel, count: self.dipoles.len() })
    }

    /// `H0 + sum_c eps_c mu_c`.
    pub fn hamiltonian(&self, fields: &[f64]) -> CMatrix {
        let mut h = self.h0.clone();
        for (mu, &e) in self.dipoles.iter().zip(fields) {
            if e != 0.0 {
                h.zip_apply(mu, |a, b| *a += b * e);
            }
        }
        h
    }
}

/// `H = (w1/2) sz + eps (sx/2)`.
pub fn build_one_qubit(omega1: f64) -> Result<QuantumSystem> {
    check_positive("omega1", omega1)?;
    let h0 = pauli_z() * c(omega1 / 2.0);
    let mu = pauli_x() * c(0.5);
    QuantumSystem::new(h0, vec![mu])
}

/// Two qubits with isotropic Heisenberg coupling and one x-field per qubit.
pub fn build_two_qubit(omega1: f64, omega2: f64, j12: f64) -> Result<QuantumSystem> {
    check_positive("omega1", omega1)?;
    check_positive("omega2", omega2)?;
    if !j12.is_finite() {
        return Err(Error::param("j12", "must be finite"));
    }
    let id = identity(2);
    let (sx, sy, sz) = (pauli_x(), pauli_y(), pauli_z());
    let coupling = kron(&sx, &sx) + kron(&sy, &sy) + kron(&sz, &sz);
    let h0 = kron(&sz, &id) * c(omega1 / 2.0) + kron(&id, &sz) * c(omega2 / 2.0) + coupling * c(j12);
    let mu1 = kron(&sx, &id) * c(0.5);
    let mu2 = kron(&id, &sx) * c(0.5);
    QuantumSystem::new(h0, vec![mu1, mu2])
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be positive, got {v}")))
    }
}

/// Sorted distinct transition frequencies `|E_i - E_j|` of the drift.
pub fn bohr_frequencies(sys: &QuantumSystem) -> Result<Vec<f64>> {
    let eig = hermitian_eigen(sys.h0())?;
    let e = &eig.values;
    let mut diffs = Vec::new();
    for i in 0..e.len() {
        for j in (i + 1)..e.len() {
            diffs.push((e[j] - e[i]).abs());
        }
    }
    diffs.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::new();
    for d in diffs {
        if d <= 1e-9 {
            continue;
        }
        match out.last() {
            Some(&last) if (d - last).abs() <= 1e-9 => {}
            _ => out.push(d),
        }
    }
    Ok(out)
}

/// Real control samples, channel-major: `samples[c * n + k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlField {
    grid: TimeGrid,
    channels: usize,
    samples: Vec<f64>,
}

impl ControlField {
    pub fn new(grid: TimeGrid, channels: usize, samples: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidInput("control field needs at least one channel".into()));
        }
        if samples.len() != channels * grid.steps() {
            return Err(Error::DimensionMismatch {
                expected: channels * grid.steps(),
                found: samples.len(),
            });
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("control field contains non-finite samples".into()));
        }
        Ok(Self { grid, channels, samples })
    }

    pub fn zeros(grid: TimeGrid, channels: usize) -> Self {
        Self { grid, channels, samples: vec![0.0; channels * grid.steps()] }
    }

    pub fn constant(grid: TimeGrid, channels: usize, value: f64) -> Result<Self> {
        Self::new(grid, channels, vec![value; channels * grid.steps()])
    }

    pub fn from_channels(grid: TimeGrid, channels: &[Vec<f64>]) -> Result<Self> {
        let samples = channels.iter().flat_map(|c| c.iter().copied()).collect();
        Self::new(grid, channels.len(), samples)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn channel_count(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.grid.steps();
        &self.samples[c * n..(c + 1) * n]
    }

    /// Field values of every channel on step `k`.
    pub fn at_step(&self, k: usize) -> Vec<f64> {
        let n = self.grid.steps();
        (0..self.channels).map(|c| self.samples[c * n + k]).collect()
    }
}

/// Propagator trajectory and the Heisenberg-picture dipoles derived from it.
#[derive(Debug, Clone)]
pub struct PropagationResult {
    pub grid: TimeGrid,
    pub dim: usize,
    /// `U(t_0) ... U(t_n)`.
    pub u_traj: Vec<CMatrix>,
    /// Per channel, `U^dag(t_{k+1}) mu U(t_{k+1})` for every sample `k`.
    pub mu_heis: Vec<Vec<CMatrix>>,
    /// Per channel, the step average `(1/dt) int U^dag(t) mu U(t) dt` over step `k`.
    /// These make the discrete gradient exact for the piecewise-constant propagator.
    pub mu_step_avg: Vec<Vec<CMatrix>>,
}

impl PropagationResult {
    pub fn u_final(&self) -> &CMatrix {
        self.u_traj.last().expect("trajectory always holds U(0)")
    }
}

fn check_field(sys: &QuantumSystem, field: &ControlField) -> Result<()> {
    if field.channel_count() != sys.channel_count() {
        return Err(Error::DimensionMismatch {
            expected: sys.channel_count(),
            found: field.channel_count(),
        });
    }
    if field.samples().iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("non-finite field sample".into()));
    }
    Ok(())
}

pub fn propagate(sys: &QuantumSystem, field: &ControlField) -> Result<PropagationResult> {
    propagate_from(sys, field, &identity(sys.dim()))
}

/// Propagate starting from `initial` instead of the identity.
pub fn propagate_from(
    sys: &QuantumSystem,
    field: &ControlField,
    initial: &CMatrix,
) -> Result<PropagationResult> {
    propagate_impl(sys, field, initial, true)
}

/// Like [`propagate`] but leaves `mu_heis` empty; enough for `J` and its gradient.
pub fn propagate_for_gradient(sys: &QuantumSystem, field: &ControlField) -> Result<PropagationResult> {
    propagate_impl(sys, field, &identity(sys.dim()), false)
}

fn propagate_impl(
    sys: &QuantumSystem,
    field: &ControlField,
    initial: &CMatrix,
    with_heis: bool,
) -> Result<PropagationResult> {
    check_field(sys, field)?;
    let n = field.grid().steps();
    let dt = field.grid().dt();
    let dim = sys.dim();
    if initial.nrows() != dim || initial.ncols() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: initial.nrows() });
    }
    let channels = sys.channel_count();

    let mut u_traj = Vec::with_capacity(n + 1);
    u_traj.push(initial.clone());
    let mut mu_heis = vec![Vec::with_capacity(if with_heis { n } else { 0 }); channels];
    let mut mu_step_avg = vec![Vec::with_capacity(n); channels];

    for k in 0..n {
        let h = sys.hamiltonian(&field.at_step(k));
        let herm = hermiticity_error(&h);
        if herm > HERMITIAN_TOL * (1.0 + linalg::hs_norm(&h)) {
            return Err(Error::InternalConsistency(format!(
                "assembled Hamiltonian at step {k} is not Hermitian (error {herm:.3e})"
            )));
        }
        let eig = hermitian_eigen(&h)?;
        let step = propagator_from_eigen(&eig, dt);
        let u_prev = &u_traj[k];
        let u_next = &step * u_prev;
        let u_prev_dag = u_prev.adjoint();
        let u_next_dag = if with_heis { u_next.adjoint() } else { CMatrix::zeros(0, 0) };
        let v = &eig.vectors;
        let v_dag = v.adjoint();
        for (ch, mu) in sys.dipoles().iter().enumerate() {
            if with_heis {
                mu_heis[ch].push(&u_next_dag * mu * &u_next);
            }
            // average of exp(iHs) mu exp(-iHs) over s in [0, dt], in the eigenbasis of H
            let mut m = &v_dag * mu * v;
            for a in 0..dim {
                for b in 0..dim {
                    m[(a, b)] *= phase_average((eig.values[a] - eig.values[b]) * dt);
                }
            }
            let avg = v * m * &v_dag;
            mu_step_avg[ch].push(&u_prev_dag * avg * u_prev);
        }
        u_traj.push(u_next);
    }
    Ok(PropagationResult { grid: *field.grid(), dim, u_traj, mu_heis, mu_step_avg })
}

/// `(e^{ix} - 1) / (ix)`, with its series near zero.
fn phase_average(x: f64) -> Complex64 {
    if x.abs() < 1e-4 {
        Complex64::new(1.0 - x * x / 6.0, x / 2.0 - x * x * x / 24.0)
    } else {
        Complex64::new(x.sin() / x, (1.0 - x.cos()) / x)
    }
}

/// `U(T)` only, without storing the trajectory.
pub fn final_unitary(sys: &QuantumSystem, field: &ControlField) -> Result<CMatrix> {
    check_field(sys, field)?;
    let dt = field.grid().dt();
    let mut u = identity(sys.dim());
    for k in 0..field.grid().steps() {
        let h = sys.hamiltonian(&field.at_step(k));
        let eig = hermitian_eigen(&h)?;
        u = propagator_from_eigen(&eig, dt) * u;
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{expm_hermitian, hs_norm, unitarity_error};
    use approx::assert_relative_eq;

    #[test]
    fn one_qubit_matrices() {
        let sys = build_one_qubit(20.0).unwrap();
        assert_eq!(sys.dim(), 2);
        assert_eq!(sys.h0()[(0, 0)], c(10.0));
        assert_eq!(sys.h0()[(1, 1)], c(-10.0));
        let mu = &sys.dipoles()[0];
        assert_eq!(mu[(0, 0)], c(0.0));
        assert_eq!(mu[(1, 1)], c(0.0));
        assert_eq!(mu[(0, 1)], c(0.5));
        assert_eq!(mu[(1, 0)], c(0.5));
        let sys2 = build_one_qubit(2.0).unwrap();
        assert!(hs_norm(&(sys2.h0() - pauli_z())) < 1e-15);
    }

    #[test]
    fn invalid_parameters() {
        assert!(matches!(build_one_qubit(0.0), Err(Error::InvalidParameter { .. })));
        assert!(matches!(build_one_qubit(-1.0), Err(Error::InvalidParameter { .. })));
        assert!(build_two_qubit(20.0, 0.0, 0.2).is_err());
    }

    #[test]
    fn two_qubit_drift() {
        let sys = build_two_qubit(20.0, 24.0, 0.2).unwrap();
        assert!(sys.h0().trace().norm() < 1e-14);
        // |00>: 10 + 12 + 0.2 (only zz contributes on the diagonal)
        assert_relative_eq!(sys.h0()[(0, 0)].re, 22.2, epsilon = 1e-14);
        let uncoupled = build_two_qubit(20.0, 24.0, 0.0).unwrap();
        let expected = [22.0, -2.0, 2.0, -22.0];
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { expected[i] } else { 0.0 };
                assert_eq!(uncoupled.h0()[(i, j)], c(want));
            }
        }
    }

    #[test]
    fn two_qubit_matches_independent_assembly() {
        // explicit 4x4 in the |00>,|01>,|10>,|11> basis
        let (w1, w2, j) = (20.0, 24.0, 0.2);
        let mut h = CMatrix::zeros(4, 4);
        let zz = [1.0, -1.0, -1.0, 1.0];
        let z1 = [1.0, 1.0, -1.0, -1.0];
        let z2 = [1.0, -1.0, 1.0, -1.0];
        for i in 0..4 {
            h[(i, i)] = c(w1 / 2.0 * z1[i] + w2 / 2.0 * z2[i] + j * zz[i]);
        }
        // xx + yy flips |01> <-> |10> with amplitude 2
        h[(1, 2)] = c(2.0 * j);
        h[(2, 1)] = c(2.0 * j);
        let sys = build_two_qubit(w1, w2, j).unwrap();
        assert!(hs_norm(&(sys.h0() - h)) < 1e-14);
    }

    #[test]
    fn bohr_frequency_sets() {
        let f = bohr_frequencies(&build_one_qubit(20.0).unwrap()).unwrap();
        assert_eq!(f.len(), 1);
        assert_relative_eq!(f[0], 20.0, epsilon = 1e-12);
        let f = bohr_frequencies(&build_two_qubit(20.0, 24.0, 0.0).unwrap()).unwrap();
        let want = [4.0, 20.0, 24.0, 44.0];
        assert_eq!(f.len(), 4);
        for (a, b) in f.iter().zip(want) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
        let f = bohr_frequencies(&build_two_qubit(20.0, 24.0, 0.2).unwrap()).unwrap();
        // the |01>,|10> block has splitting sqrt(4^2 + 0.8^2)
        let split = (16.0f64 + 0.64).sqrt();
        assert!(f.iter().any(|x| (x - split).abs() < 1e-9), "{f:?}");
        assert!(f.iter().all(|x| want.iter().any(|w| (x - w).abs() < 1.5)), "{f:?}");
    }

    #[test]
    fn drift_only_evolution() {
        let sys = build_one_qubit(20.0).unwrap();
        let grid = TimeGrid::new(1.0, 0.01).unwrap();
        let prop = propagate(&sys, &ControlField::zeros(grid, 1)).unwrap();
        let u = prop.u_final();
        assert!((u[(0, 0)] - Complex64::from_polar(1.0, -10.0)).norm() < 1e-12);
        assert!((u[(1, 1)] - Complex64::from_polar(1.0, 10.0)).norm() < 1e-12);
        assert!(u[(0, 1)].norm() < 1e-14);
    }

    #[test]
    fn constant_field_single_exponential() {
        let sys = build_one_qubit(20.0).unwrap();
        let grid = TimeGrid::new(1.0, 0.01).unwrap();
        let cval = 3.7;
        let prop = propagate(&sys, &ControlField::constant(grid, 1, cval).unwrap()).unwrap();
        let exact = expm_hermitian(&sys.hamiltonian(&[cval]), 1.0).unwrap();
        assert!(hs_norm(&(prop.u_final() - exact)) < 1e-8);
    }

    #[test]
    fn trajectory_shapes_and_identity_start() {
        let sys = build_two_qubit(20.0, 24.0, 0.2).unwrap();
        let grid = TimeGrid::new(0.5, 0.01).unwrap();
        let field = ControlField::constant(grid, 2, 1.0).unwrap();
        let prop = propagate(&sys, &field).unwrap();
        assert_eq!(prop.u_traj.len(), 51);
        assert_eq!(prop.mu_heis.len(), 2);
        assert_eq!(prop.mu_heis[1].len(), 50);
        assert!(hs_norm(&(&prop.u_traj[0] - identity(4))) == 0.0);
        assert!(unitarity_error(prop.u_final()) < 1e-12);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let sys = build_two_qubit(20.0, 24.0, 0.2).unwrap();
        let grid = TimeGrid::new(0.1, 0.01).unwrap();
        assert!(matches!(
            propagate(&sys, &ControlField::zeros(grid, 1)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(ControlField::new(grid, 1, vec![f64::NAN; 10]).is_err());
    }
}

//! Random initial fields and the D-MORPH gradient flow
//! `d eps(s, t) / ds = -dJ / d eps(s, t)`, integrated with an adaptive
//! Dormand-Prince 5(4) scheme until the gate cost reaches its target.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::landscape::{cost_j, gradient_all, TargetGate};
use crate::system::{propagate_for_gradient, ControlField, QuantumSystem};

/// Sum of sinusoids at the given (resonant) frequencies with random
/// amplitudes and phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialFieldSpec {
    pub frequencies: Vec<f64>,
    pub amplitude_range: (f64, f64),
    pub seed: u64,
}

impl InitialFieldSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.amplitude_range;
        if self.frequencies.is_empty() {
            return Err(Error::param("frequencies", "at least one frequency is required"));
        }
        if self.frequencies.iter().any(|w| !w.is_finite()) {
            return Err(Error::param("frequencies", "must be finite"));
        }
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && hi >= lo) {
            return Err(Error::param(
                "amplitude_range",
                format!("need 0 <= a_min <= a_max, got [{lo}, {hi}]"),
            ));
        }
        Ok(())
    }
}

/// `eps_c(t) = sum_m a_{c,m} sin(w_m t + phi_{c,m})`, sampled at the
/// end-of-step times. Deterministic in `spec.seed`.
pub fn sample_initial_field(
    spec: &InitialFieldSpec,
    grid: TimeGrid,
    channels: usize,
) -> Result<ControlField> {
    spec.validate()?;
    let (lo, hi) = spec.amplitude_range;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let times = grid.sample_times();
    let mut samples = Vec::with_capacity(channels * grid.steps());
    for _ in 0..channels {
        let comps: Vec<(f64, f64, f64)> = spec
            .frequencies
            .iter()
            .map(|&w| {
                let a = if hi > lo { rng.random_range(lo..hi) } else { lo };
                let phi = rng.random_range(0.0..TAU);
                (w, a, phi)
            })
            .collect();
        samples.extend(times.iter().map(|&t| comps.iter().map(|&(w, a, phi)| a * (w * t + phi).sin()).sum::<f64>()));
    }
    ControlField::new(grid, channels, samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowSettings {
    pub target_j: f64,
    pub max_s: f64,
    pub rtol: f64,
    pub atol: f64,
    pub initial_step: f64,
}

impl Default for FlowSettings {
    fn default() -> Self {
        Self { target_j: 1e-6, max_s: 1e5, rtol: 1e-8, atol: 1e-10, initial_step: 1e-3 }
    }
}

impl FlowSettings {
    pub fn with_target(mut self, target_j: f64) -> Self {
        self.target_j = target_j;
        self
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.target_j > 0.0 && self.target_j < 1.0) {
            return Err(Error::param("target_j", format!("must lie in (0, 1), got {}", self.target_j)));
        }
        if !(self.max_s > 0.0) {
            return Err(Error::param("max_s", "must be positive"));
        }
        if !(self.rtol > 0.0 && self.atol > 0.0 && self.initial_step > 0.0) {
            return Err(Error::param("rtol/atol/initial_step", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowSample {
    pub s: f64,
    pub j: f64,
    /// `dJ/ds = -int (dJ/d eps)^2 dt` at this point of the flow.
    pub dj_ds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizationOutcome {
    pub field: ControlField,
    pub j_final: f64,
    pub s_final: f64,
    pub converged: bool,
    pub j_history: Vec<FlowSample>,
    pub evaluations: usize,
    pub rejected_steps: usize,
}

struct Evaluator<'a> {
    sys: &'a QuantumSystem,
    w: &'a TargetGate,
    grid: TimeGrid,
    channels: usize,
    count: usize,
}

impl Evaluator<'_> {
    /// Returns `J` and the flow velocity `-g`.
    fn eval(&mut self, y: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.count += 1;
        let field = ControlField::new(self.grid, self.channels, y.to_vec())?;
        let prop = propagate_for_gradient(self.sys, &field)?;
        let j = cost_j(self.w, prop.u_final())?;
        if !j.is_finite() {
            return Err(Error::Numerical("cost became non-finite".into()));
        }
        let mut v = gradient_all(self.w, &prop)?;
        for x in &mut v {
            *x = -*x;
        }
        Ok((j, v))
    }
}

// Dormand-Prince 5(4) tableau
const A: [&[f64]; 6] = [
    &[1.0 / 5.0],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
    &[9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0],
    &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// fifth-order minus embedded fourth-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

fn dj_ds(velocity: &[f64], dt: f64) -> f64 {
    -dt * velocity.iter().map(|v| v * v).sum::<f64>()
}

/// Integrates the gradient flow from `init` until `J <= target_j` or `s > max_s`.
///
/// A step is accepted only when its error estimate is within tolerance and
/// `J` did not increase, so the recorded history is monotone.
pub fn optimize(
    sys: &QuantumSystem,
    w: &TargetGate,
    init: &ControlField,
    settings: &FlowSettings,
) -> Result<OptimizationOutcome> {
    settings.validate()?;
    if init.channel_count() != sys.channel_count() {
        return Err(Error::DimensionMismatch { expected: sys.channel_count(), found: init.channel_count() });
    }
    if w.dim() != sys.dim() {
        return Err(Error::DimensionMismatch { expected: sys.dim(), found: w.dim() });
    }
    let grid = *init.grid();
    let dt = grid.dt();
    let mut ev = Evaluator { sys, w, grid, channels: init.channel_count(), count: 0 };

    let mut y = init.samples().to_vec();
    let dim = y.len();
    let (mut j, mut k1) = ev.eval(&y)?;
    let mut s = 0.0;
    let mut history = vec![FlowSample { s, j, dj_ds: dj_ds(&k1, dt) }];
    let mut h = settings.initial_step;
    let mut rejected = 0usize;

    let done = |y: Vec<f64>, j: f64, s: f64, converged: bool, history, ev: &Evaluator, rejected| {
        Ok(OptimizationOutcome {
            field: ControlField::new(grid, init.channel_count(), y)?,
            j_final: j,
            s_final: s,
            converged,
            j_history: history,
            evaluations: ev.count,
            rejected_steps: rejected,
        })
    };

    if j <= settings.target_j {
        return done(y, j, s, true, history, &ev, rejected);
    }

    let mut stages: Vec<Vec<f64>> = Vec::with_capacity(7);
    let mut tmp = vec![0.0; dim];
    loop {
        if s > settings.max_s {
            return done(y, j, s, false, history, &ev, rejected);
        }
        stages.clear();
        stages.push(k1.clone());
        for row in A.iter().take(5) {
            for i in 0..dim {
                let incr: f64 = row.iter().zip(&stages).map(|(a, k)| a * k[i]).sum();
                tmp[i] = y[i] + h * incr;
            }
            let (_, k) = ev.eval(&tmp)?;
            stages.push(k);
        }
        let y_new: Vec<f64> = (0..dim)
            .map(|i| y[i] + h * A[5].iter().zip(&stages).map(|(a, k)| a * k[i]).sum::<f64>())
            .collect();
        let (j_new, k7) = ev.eval(&y_new)?;
        stages.push(k7);

        let mut err_sq = 0.0;
        for i in 0..dim {
            let e: f64 = h * E.iter().zip(&stages).map(|(c, k)| c * k[i]).sum::<f64>();
            let scale = settings.atol + settings.rtol * y[i].abs().max(y_new[i].abs());
            err_sq += (e / scale).powi(2);
        }
        let err = (err_sq / dim as f64).sqrt();

        let accepted = err <= 1.0 && j_new <= j;
        if accepted {
            s += h;
            y = y_new;
            j = j_new;
            k1 = stages.pop().expect("seven stages");
            history.push(FlowSample { s, j, dj_ds: dj_ds(&k1, dt) });
            if j <= settings.target_j {
                return done(y, j, s, true, history, &ev, rejected);
            }
        } else {
            rejected += 1;
        }

        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= if !accepted && err <= 1.0 { 0.5 } else { factor };
        if h < 1e-12 * s.max(1.0) {
            return Err(Error::ConvergenceFailure {
                s,
                j,
                step: h,
                reason: format!("step size underflow after {} evaluations", ev.count),
            });
        }
    }
}

//! Run configuration, read from a TOML document. Every key is optional;
//! missing keys take the defaults below. Unknown keys are rejected.
//!
//! ```toml
//! gate = "hadamard"        # "hadamard" | "cnot"
//! seed = 1                 # master seed
//! output_dir = "out"
//! threads = 0              # 0 = all cores, 1 = sequential
//!
//! [system]
//! omega1 = 20.0
//! omega2 = 24.0            # cnot only
//! j12 = 0.2                # cnot only
//! total_time = 1.0         # default 1 (hadamard) or 10 (cnot)
//! dt = 0.01
//!
//! [optimizer]
//! target_j = 1e-6
//! max_s = 1e5
//! rtol = 1e-8
//! atol = 1e-10
//! initial_step = 1e-3
//! amplitude_range = [0.0, 2.0]  # default [0, 2] (hadamard) or [0, 1] (cnot)
//!
//! [noise]
//! kind = "exponential"     # "exponential" | "white" | "constant"
//! a_sq = 1e-4
//! operator_scale = 1.0     # noise enters as operator_scale * mu_c * d eps_c
//! alpha = 0.1
//! alpha_grid = [0.001, 0.01, 0.1, 1.0, 10.0, 100.0]
//! band = [6.0, 50.0]
//!
//! [robustness]
//! frequency_domain = true
//! monte_carlo_samples = 0  # 0 disables the sampling estimate
//!
//! [ensemble]
//! members = 50
//! couplings = ["additive", "multiplicative"]
//! sigma_mode = "subset"    # "subset" | "total"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dmorph::FlowSettings;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::grid::TimeGrid;
use crate::landscape::TargetGate;
use crate::noise::{NoiseKind, NoiseModel, RegimeRule};
use crate::robustness::NoiseCoupling;
use crate::system::{build_one_qubit, build_two_qubit, QuantumSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    Hadamard,
    Cnot,
}

impl Gate {
    pub fn default_total_time(self) -> f64 {
        match self {
            Gate::Hadamard => 1.0,
            Gate::Cnot => 10.0,
        }
    }

    pub fn default_amplitude_range(self) -> [f64; 2] {
        match self {
            Gate::Hadamard => [0.0, 2.0],
            Gate::Cnot => [0.0, 1.0],
        }
    }

    pub fn channels(self) -> usize {
        match self {
            Gate::Hadamard => 1,
            Gate::Cnot => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub omega1: f64,
    pub omega2: f64,
    pub j12: f64,
    pub total_time: Option<f64>,
    pub dt: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig { omega1: 20.0, omega2: 24.0, j12: 0.2, total_time: None, dt: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub target_j: f64,
    pub max_s: f64,
    pub rtol: f64,
    pub atol: f64,
    pub initial_step: f64,
    pub amplitude_range: Option<[f64; 2]>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let f = FlowSettings::default();
        OptimizerConfig {
            target_j: f.target_j,
            max_s: f.max_s,
            rtol: f.rtol,
            atol: f.atol,
            initial_step: f.initial_step,
            amplitude_range: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    Exponential,
    White,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: NoiseFamily,
    pub a_sq: f64,
    pub operator_scale: f64,
    pub alpha: f64,
    pub alpha_grid: Vec<f64>,
    pub band: [f64; 2],
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            kind: NoiseFamily::Exponential,
            a_sq: 1e-4,
            operator_scale: 1.0,
            alpha: 0.1,
            alpha_grid: vec![0.001, 0.01, 0.1, 1.0, 10.0, 100.0],
            band: [6.0, 50.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessConfig {
    pub frequency_domain: bool,
    pub monte_carlo_samples: usize,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        RobustnessConfig { frequency_domain: true, monte_carlo_samples: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    /// Normalize by the number of members at or below the mean.
    #[default]
    Subset,
    /// Normalize by the number of all converged members.
    Total,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    pub members: usize,
    pub couplings: Vec<NoiseCoupling>,
    pub sigma_mode: SigmaMode,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        EnsembleSection {
            members: 50,
            couplings: vec![NoiseCoupling::Additive, NoiseCoupling::Multiplicative],
            sigma_mode: SigmaMode::Subset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub gate: Gate,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub threads: usize,
    pub system: SystemConfig,
    pub optimizer: OptimizerConfig,
    pub noise: NoiseConfig,
    pub robustness: RobustnessConfig,
    pub ensemble: EnsembleSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            gate: Gate::Hadamard,
            seed: 1,
            output_dir: PathBuf::from("out"),
            threads: 0,
            system: SystemConfig::default(),
            optimizer: OptimizerConfig::default(),
            noise: NoiseConfig::default(),
            robustness: RobustnessConfig::default(),
            ensemble: EnsembleSection::default(),
        }
    }
}

/// Physical problem: system, target and time grid.
#[derive(Debug, Clone)]
pub struct Problem {
    pub gate: Gate,
    pub system: QuantumSystem,
    pub target: TargetGate,
    pub grid: TimeGrid,
}

impl Problem {
    pub fn new(gate: Gate, sys: &SystemConfig) -> Result<Self> {
        let total_time = sys.total_time.unwrap_or(gate.default_total_time());
        let grid = TimeGrid::new(total_time, sys.dt)?;
        let (system, target) = match gate {
            Gate::Hadamard => (build_one_qubit(sys.omega1)?, TargetGate::hadamard()),
            Gate::Cnot => (build_two_qubit(sys.omega1, sys.omega2, sys.j12)?, TargetGate::cnot()),
        };
        Ok(Problem { gate, system, target, grid })
    }

    pub fn hadamard() -> Self {
        Self::new(Gate::Hadamard, &SystemConfig::default()).expect("default parameters are valid")
    }

    pub fn cnot() -> Self {
        Self::new(Gate::Cnot, &SystemConfig::default()).expect("default parameters are valid")
    }
}

impl RunConfig {
    pub fn for_gate(gate: Gate) -> Self {
        RunConfig { gate, ..Default::default() }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Fills in gate-dependent defaults so the echoed config is complete.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.system.total_time = Some(self.total_time());
        c.optimizer.amplitude_range = Some(self.amplitude_range_array());
        c
    }

    pub fn total_time(&self) -> f64 {
        self.system.total_time.unwrap_or(self.gate.default_total_time())
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.system;
        for (name, v) in [("system.omega1", s.omega1), ("system.omega2", s.omega2), ("system.j12", s.j12)] {
            if !v.is_finite() {
                return Err(Error::param(name, "must be finite"));
            }
        }
        self.problem()?;
        self.flow_settings().validate()?;
        let [lo, hi] = self.amplitude_range_array();
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
            return Err(Error::param("optimizer.amplitude_range", format!("need 0 <= min <= max, got [{lo}, {hi}]")));
        }
        let n = &self.noise;
        if !(n.a_sq.is_finite() && n.a_sq >= 0.0) {
            return Err(Error::param("noise.a_sq", "must be finite and >= 0"));
        }
        if !(n.operator_scale.is_finite() && n.operator_scale > 0.0) {
            return Err(Error::param("noise.operator_scale", "must be finite and > 0"));
        }
        if !(n.alpha.is_finite() && n.alpha > 0.0) {
            return Err(Error::param("noise.alpha", "must be finite and > 0"));
        }
        if n.alpha_grid.is_empty() || n.alpha_grid.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::param("noise.alpha_grid", "must be a non-empty list of positive values"));
        }
        if !(n.band[0] > 0.0 && n.band[1] > n.band[0]) {
            return Err(Error::param("noise.band", "need 0 < lo < hi"));
        }
        if self.ensemble.members == 0 {
            return Err(Error::param("ensemble.members", "must be at least 1"));
        }
        if self.ensemble.couplings.is_empty() {
            return Err(Error::param("ensemble.couplings", "must not be empty"));
        }
        let mc = self.robustness.monte_carlo_samples;
        if mc == 1 {
            return Err(Error::param("robustness.monte_carlo_samples", "use 0 (off) or at least 2"));
        }
        Ok(())
    }

    pub fn problem(&self) -> Result<Problem> {
        Problem::new(self.gate, &self.system)
    }

    pub fn flow_settings(&self) -> FlowSettings {
        let o = &self.optimizer;
        FlowSettings {
            target_j: o.target_j,
            max_s: o.max_s,
            rtol: o.rtol,
            atol: o.atol,
            initial_step: o.initial_step,
        }
    }

    fn amplitude_range_array(&self) -> [f64; 2] {
        self.optimizer.amplitude_range.unwrap_or(self.gate.default_amplitude_range())
    }

    pub fn amplitude_range(&self) -> (f64, f64) {
        let [lo, hi] = self.amplitude_range_array();
        (lo, hi)
    }

    /// Noise strength seen by the control dipoles, `a_sq * operator_scale^2`.
    pub fn effective_a_sq(&self) -> f64 {
        self.noise.a_sq * self.noise.operator_scale.powi(2)
    }

    /// The single noise model of `[noise]` (uses `alpha` for the exponential kind).
    pub fn noise_model(&self) -> Result<NoiseModel> {
        let kind = match self.noise.kind {
            NoiseFamily::Exponential => NoiseKind::Exponential { alpha: self.noise.alpha },
            NoiseFamily::White => NoiseKind::White,
            NoiseFamily::Constant => NoiseKind::Constant,
        };
        NoiseModel::new(kind, self.effective_a_sq())
    }

    /// Exponential models over `alpha_grid`.
    pub fn alpha_sweep(&self) -> Result<Vec<NoiseModel>> {
        self.noise.alpha_grid.iter().map(|&a| NoiseModel::exponential(a, self.effective_a_sq())).collect()
    }

    pub fn regime_rule(&self) -> RegimeRule {
        RegimeRule { band: (self.noise.band[0], self.noise.band[1]), ..RegimeRule::default() }
    }

    pub fn execution(&self) -> Execution {
        if self.threads == 1 {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml_string();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
        assert_eq!(RunConfig::from_toml_str("").unwrap(), cfg);
        assert_eq!(cfg.resolved().system.total_time, Some(1.0));
        assert_eq!(RunConfig::for_gate(Gate::Cnot).total_time(), 10.0);
    }

    #[test]
    fn doc_example_parses() {
        let doc: String = include_str!("config.rs")
            .lines()
            .skip_while(|l| !l.starts_with("//! ```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| l.trim_start_matches("//!").trim_start_matches(' '))
            .collect::<Vec<_>>()
            .join("\n");
        let cfg = RunConfig::from_toml_str(&doc).unwrap();
        assert_eq!(cfg, RunConfig::default().resolved());
    }

    #[test]
    fn errors_name_the_field() {
        let e = RunConfig::from_toml_str("[noise]\na_sq = -1.0\n").unwrap_err().to_string();
        assert!(e.contains("noise.a_sq"), "{e}");
        let e = RunConfig::from_toml_str("[system]\ndt = \"x\"\n").unwrap_err().to_string();
        assert!(e.contains("dt"), "{e}");
        let e = RunConfig::from_toml_str("[system]\nomgea1 = 3.0\n").unwrap_err().to_string();
        assert!(e.contains("omgea1"), "{e}");
        let e = RunConfig::from_toml_str("[system]\ntotal_time = 1.0\ndt = 0.3\n").unwrap_err().to_string();
        assert!(e.contains("dt") || e.contains("total_time"), "{e}");
    }
}

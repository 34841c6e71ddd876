use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use qrobust::config::RunConfig;
use qrobust::dmorph::{optimize, sample_initial_field, InitialFieldSpec};
use qrobust::ensemble::{regime_summary, run_ensemble, EnsembleConfig};
use qrobust::exec::with_threads;
use qrobust::io::{read_field_csv, write_csv, write_field_csv, write_json, Artifact, Cell};
use qrobust::landscape::{cost_j, hessian_frequency, hessian_spectrum, hessian_with, NULLSPACE_THRESHOLD};
use qrobust::noise::{classify_regime, noise_spectrum, psd, NoiseKind};
use qrobust::robustness::{
    k_monte_carlo, overlap_coefficients, robustness_report, robustness_report_frequency,
    robustness_report_low_frequency, robustness_report_white, MonteCarloEstimate, NoiseCoupling, OverlapTable,
    RobustnessReport,
};
use qrobust::system::{bohr_frequencies, propagate, ControlField};
use qrobust::{Error, TimeGrid};

#[derive(Parser)]
#[command(name = "qrobust", version, about = "Gate optimization and control-noise robustness analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration (defaults are used for missing keys)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed (overrides `seed` in the config)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `output_dir`)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Monte-Carlo noise paths (overrides `robustness.monte_carlo_samples`)
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Worker threads; 1 runs sequentially, 0 uses all cores
    #[arg(long, global = true)]
    parallel: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a control field for the configured gate
    Optimize,
    /// Robustness measures of a field
    Robustness {
        #[arg(long)]
        field: PathBuf,
    },
    /// Optimize an ensemble and summarize its robustness over the alpha grid
    Ensemble,
    /// Hessian and noise spectra of a field
    Spectrum {
        #[arg(long)]
        field: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn resolve(common: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    if let Some(n) = common.samples {
        cfg.robustness.monte_carlo_samples = n;
    }
    if let Some(p) = common.parallel {
        cfg.threads = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let cfg = resolve(&cli.common)?;
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating output directory {}", cfg.output_dir.display()))?;
    let threads = cfg.threads;
    with_threads(threads, move || match &cli.command {
        Command::Optimize => cmd_optimize(&cfg),
        Command::Robustness { field } => cmd_robustness(&cfg, field),
        Command::Ensemble => cmd_ensemble(&cfg),
        Command::Spectrum { field } => cmd_spectrum(&cfg, field),
    })
}

#[derive(Serialize)]
struct OptimizeSummary {
    gate: String,
    converged: bool,
    j_initial: f64,
    j_final: f64,
    s_final: f64,
    evaluations: usize,
    rejected_steps: usize,
    fluence: Vec<f64>,
    max_abs_field: f64,
}

fn cmd_optimize(cfg: &RunConfig) -> anyhow::Result<ExitCode> {
    let p = cfg.problem()?;
    let spec = InitialFieldSpec {
        frequencies: bohr_frequencies(&p.system)?,
        amplitude_range: cfg.amplitude_range(),
        seed: cfg.seed,
    };
    let init = sample_initial_field(&spec, p.grid, p.system.channel_count())?;
    let out = optimize(&p.system, &p.target, &init, &cfg.flow_settings())?;
    let dir = &cfg.output_dir;
    write_field_csv(&dir.join("field.csv"), &out.field)?;
    write_field_csv(&dir.join("initial_field.csv"), &init)?;
    write_csv(
        &dir.join("history.csv"),
        &["s", "J", "dJ_ds"],
        out.j_history.iter().map(|h| vec![h.s.into(), h.j.into(), h.dj_ds.into()]),
    )?;
    let summary = OptimizeSummary {
        gate: p.target.label().to_string(),
        converged: out.converged,
        j_initial: out.j_history[0].j,
        j_final: out.j_final,
        s_final: out.s_final,
        evaluations: out.evaluations,
        rejected_steps: out.rejected_steps,
        fluence: qrobust::robustness::fluence(&out.field),
        max_abs_field: out.field.samples().iter().fold(0.0f64, |m, x| m.max(x.abs())),
    };
    write_json(&dir.join("summary.json"), &Artifact::new("optimize", cfg, &summary))?;
    println!(
        "{}: J = {:.3e} after s = {:.3e} ({} evaluations){}",
        summary.gate,
        out.j_final,
        out.s_final,
        out.evaluations,
        if out.converged { "" } else { ", NOT converged" }
    );
    if out.converged {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("target J = {:.1e} not reached; diagnostics in {}", cfg.optimizer.target_j, dir.display());
        Ok(ExitCode::from(2))
    }
}

fn load_field(cfg: &RunConfig, path: &Path, grid: TimeGrid, channels: usize) -> anyhow::Result<ControlField> {
    let field = read_field_csv(path).with_context(|| format!("reading field {}", path.display()))?;
    if !field.grid().matches(&grid) || field.channel_count() != channels {
        return Err(Error::GridMismatch {
            expected_t: grid.total_time(),
            expected_dt: grid.dt(),
            expected_channels: channels,
            found_t: field.grid().total_time(),
            found_dt: field.grid().dt(),
            found_channels: field.channel_count(),
        })
        .with_context(|| format!("field {} does not fit the {:?} configuration", path.display(), cfg.gate));
    }
    Ok(field)
}

#[derive(Serialize)]
struct RobustnessOutput {
    j: f64,
    reports: Vec<RobustnessReport>,
    monte_carlo: Vec<(NoiseCoupling, MonteCarloEstimate)>,
}

fn overlap_rows(table: &OverlapTable) -> Vec<Vec<Cell>> {
    let mut rows = Vec::new();
    for (i, row) in table.coefficients.iter().enumerate() {
        for (j, c) in row.iter().enumerate() {
            rows.push(vec![
                (i + 1).into(),
                (j + 1).into(),
                (*c).into(),
                table.hessian_eigenvalues[i].into(),
                table.noise_eigenvalues[j].into(),
                (table.hessian_channels[i] + 1).into(),
            ]);
        }
    }
    rows
}

const OVERLAP_HEADER: [&str; 6] = ["i", "j", "C", "lambda_i", "gamma_j", "channel"];

fn cmd_robustness(cfg: &RunConfig, field_path: &Path) -> anyhow::Result<ExitCode> {
    let p = cfg.problem()?;
    let field = load_field(cfg, field_path, p.grid, p.system.channel_count())?;
    let exec = cfg.execution();
    let noise = cfg.noise_model()?;
    let prop = propagate(&p.system, &field)?;
    let j = cost_j(&p.target, prop.u_final())?;
    let kern = hessian_with(&p.target, &prop, exec)?;
    let mut reports = vec![robustness_report(&kern, &field, &noise)?];
    match noise.kind {
        NoiseKind::Exponential { .. } if cfg.robustness.frequency_domain => {
            reports.push(robustness_report_frequency(&kern, &field, &noise)?)
        }
        NoiseKind::Constant => reports.push(robustness_report_low_frequency(&hessian_spectrum(&kern)?, &field, &noise)?),
        NoiseKind::White => reports.push(robustness_report_white(&p.system, &field, &noise)),
        _ => {}
    }
    let mut monte_carlo = Vec::new();
    if cfg.robustness.monte_carlo_samples > 0 {
        for (i, coupling) in [NoiseCoupling::Additive, NoiseCoupling::Multiplicative].into_iter().enumerate() {
            let est = k_monte_carlo(
                &p.system,
                &p.target,
                &field,
                &noise,
                coupling,
                cfg.robustness.monte_carlo_samples,
                cfg.seed.wrapping_add(i as u64),
                exec,
            )?;
            monte_carlo.push((coupling, est));
        }
    }
    let dir = &cfg.output_dir;
    let hspec = hessian_spectrum(&kern)?;
    let nspec = noise_spectrum(&noise, p.grid)?;
    write_csv(&dir.join("overlap_additive.csv"), &OVERLAP_HEADER, overlap_rows(&overlap_coefficients(&hspec, &nspec, None)?))?;
    write_csv(
        &dir.join("overlap_multiplicative.csv"),
        &OVERLAP_HEADER,
        overlap_rows(&overlap_coefficients(&hspec, &nspec, Some(&field))?),
    )?;
    let output = RobustnessOutput { j, reports, monte_carlo };
    write_json(&dir.join("robustness.json"), &Artifact::new("robustness", cfg, &output))?;
    for r in &output.reports {
        println!("{:?}: K_A = {:.6e}, K_M = {:.6e}", r.method, r.k_additive, r.k_multiplicative);
    }
    for (c, est) in &output.monte_carlo {
        println!("MonteCarlo {c:?}: {:.6e} +/- {:.2e}", est.estimate, est.std_error);
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct MemberIndexEntry<'a> {
    record: &'a qrobust::ensemble::MemberRecord,
    field_file: Option<String>,
}

fn cmd_ensemble(cfg: &RunConfig) -> anyhow::Result<ExitCode> {
    let p = cfg.problem()?;
    let mut ecfg = EnsembleConfig::new(p, cfg.ensemble.members, cfg.seed, cfg.alpha_sweep()?);
    ecfg.couplings = cfg.ensemble.couplings.clone();
    ecfg.flow = cfg.flow_settings();
    ecfg.amplitude_range = cfg.amplitude_range();
    ecfg.sigma_mode = cfg.ensemble.sigma_mode;
    let stats = run_ensemble(&ecfg, cfg.execution())?;
    let dir = &cfg.output_dir;
    let rule = cfg.regime_rule();

    write_csv(
        &dir.join("ensemble_stats.csv"),
        &["alpha", "coupling", "regime", "mean", "sigma_l", "k_min", "k_max", "argmin", "argmax", "n_converged", "n_total"],
        stats.entries.iter().map(|e| {
            let regime = classify_regime(&e.noise, &rule).map(|r| r.to_string()).unwrap_or_default();
            vec![
                e.noise.alpha().unwrap_or(f64::NAN).into(),
                coupling_name(e.coupling).into(),
                regime.into(),
                e.mean.into(),
                e.sigma_l.into(),
                e.k_min.into(),
                e.k_max.into(),
                e.argmin.into(),
                e.argmax.into(),
                e.n_converged.into(),
                stats.members_total.into(),
            ]
        }),
    )?;
    write_json(&dir.join("regime_summary.json"), &Artifact::new("ensemble", cfg, &regime_summary(&stats, &rule)))?;

    let extremes: BTreeSet<usize> = stats.entries.iter().flat_map(|e| [e.argmin, e.argmax]).collect();
    let mut index = Vec::new();
    for m in &stats.members {
        let file = if extremes.contains(&m.index) {
            let name = format!("member_{:04}_field.csv", m.index);
            if let Some(f) = &m.field {
                write_field_csv(&dir.join(&name), f)?;
            }
            Some(name)
        } else {
            None
        };
        index.push(MemberIndexEntry { record: m, field_file: file });
    }
    #[derive(Serialize)]
    struct Index<'a> {
        members_total: usize,
        members_converged: usize,
        entries: &'a [qrobust::ensemble::StatEntry],
        members: Vec<MemberIndexEntry<'a>>,
    }
    let idx = Index {
        members_total: stats.members_total,
        members_converged: stats.members_converged,
        entries: &stats.entries,
        members: index,
    };
    write_json(&dir.join("members.json"), &Artifact::new("ensemble", cfg, &idx))?;
    println!("{} of {} members converged", stats.members_converged, stats.members_total);
    for e in &stats.entries {
        println!(
            "alpha {:>8} {:<14} <K> = {:.4e}  sigma_l = {:.3e}  [{:.4e}, {:.4e}]",
            e.noise.alpha().map(|a| a.to_string()).unwrap_or_default(),
            coupling_name(e.coupling),
            e.mean,
            e.sigma_l,
            e.k_min,
            e.k_max
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn coupling_name(c: NoiseCoupling) -> &'static str {
    match c {
        NoiseCoupling::Additive => "additive",
        NoiseCoupling::Multiplicative => "multiplicative",
    }
}

#[derive(Serialize)]
struct SpectrumSummary {
    j: f64,
    trace: Vec<f64>,
    rank: usize,
    max_abs_eigenvalue: f64,
    min_eigenvalue: f64,
    noise_rank: usize,
    noise_total: f64,
}

fn cmd_spectrum(cfg: &RunConfig, field_path: &Path) -> anyhow::Result<ExitCode> {
    let p = cfg.problem()?;
    let field = load_field(cfg, field_path, p.grid, p.system.channel_count())?;
    let noise = cfg.noise_model()?;
    let prop = propagate(&p.system, &field)?;
    let j = cost_j(&p.target, prop.u_final())?;
    let kern = hessian_with(&p.target, &prop, cfg.execution())?;
    let hspec = hessian_spectrum(&kern)?;
    let nspec = noise_spectrum(&noise, p.grid)?;
    let dir = &cfg.output_dir;
    let times = p.grid.sample_times();

    write_csv(
        &dir.join("hessian_eigenvalues.csv"),
        &["i", "channel", "lambda"],
        hspec
            .eigenvalues
            .iter()
            .zip(&hspec.channels)
            .enumerate()
            .map(|(i, (l, c))| vec![(i + 1).into(), (c + 1).into(), (*l).into()]),
    )?;
    let rank = hspec.rank(NULLSPACE_THRESHOLD);
    write_columns(&dir.join("hessian_eigenfunctions.csv"), "v", &times, &hspec.eigenfunctions[..rank])?;
    write_csv(
        &dir.join("noise_eigenvalues.csv"),
        &["j", "gamma"],
        nspec.eigenvalues.iter().enumerate().map(|(j, g)| vec![(j + 1).into(), (*g).into()]),
    )?;
    let m = nspec.coverage_count(0.999).min(50);
    write_columns(&dir.join("noise_eigenfunctions.csv"), "u", &times, &nspec.eigenfunctions[..m])?;

    if let NoiseKind::Exponential { alpha } = noise.kind {
        let w_max = (20.0 / alpha).max(200.0);
        let omegas: Vec<f64> = (0..=2000).map(|i| w_max * i as f64 / 2000.0).collect();
        let h_add = hessian_frequency(&kern, None, &omegas)?;
        let h_mult = hessian_frequency(&kern, Some(&field), &omegas)?;
        let rows = omegas
            .iter()
            .enumerate()
            .map(|(i, &w)| Ok(vec![w.into(), psd(&noise, w)?.into(), h_add[i].into(), h_mult[i].into()]))
            .collect::<qrobust::Result<Vec<_>>>()?;
        write_csv(&dir.join("frequency.csv"), &["omega", "S", "H_additive", "H_multiplicative"], rows)?;
    }

    let summary = SpectrumSummary {
        j,
        trace: kern.traces(),
        rank,
        max_abs_eigenvalue: hspec.max_abs(),
        min_eigenvalue: hspec.min_eigenvalue(),
        noise_rank: nspec.rank,
        noise_total: nspec.total(),
    };
    write_json(&dir.join("spectrum.json"), &Artifact::new("spectrum", cfg, &summary))?;
    println!(
        "J = {:.3e}, Hessian rank {} (trace {:?}), noise rank {}",
        j, summary.rank, summary.trace, summary.noise_rank
    );
    Ok(ExitCode::SUCCESS)
}

fn write_columns(path: &Path, prefix: &str, times: &[f64], columns: &[Vec<f64>]) -> anyhow::Result<()> {
    if columns.iter().any(|c| c.len() != times.len()) {
        bail!("column length does not match the time grid");
    }
    let names: Vec<String> = (1..=columns.len()).map(|i| format!("{prefix}_{i}")).collect();
    let mut header = vec!["t"];
    header.extend(names.iter().map(String::as_str));
    let rows = times.iter().enumerate().map(|(k, &t)| {
        let mut row = vec![Cell::Num(t)];
        row.extend(columns.iter().map(|c| Cell::Num(c[k])));
        row
    });
    write_csv(path, &header, rows)?;
    Ok(())
}

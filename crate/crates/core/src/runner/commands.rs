use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::report::{anchors, Report, Verdict};
use super::sampling::{random_initial_state, seeded_rng};
use crate::error::{Error, Result};
use crate::flow::{
    conserved_report, integrate, prepare_initial, twisted_rate_check, Bundle, DriftReport, InitialState, Trajectory,
};
use crate::frenet::{
    algebraic_chain, constancy_verdict, curvature_profile, numeric_chain, rank_collapse_verdict, span_residual,
    vanishing_verdict, ChainSource, CurvatureProfile, VANISHING_INDEX,
};
use crate::lifted::{random_connection_sweep, BergerSasaki};
use crate::space_form::FrameVector;

/// Largest power `q` in the span-identity checks.
pub const SPAN_Q_MAX: usize = 5;
/// Highest chain index compared between numeric and algebraic chains.
pub const ORACLE_P_MAX: usize = 4;
/// Highest chain index whose norm is checked for constancy.
pub const CHAIN_NORM_P_MAX: usize = 6;
/// `|xi_0|` of the tangent-bundle probe in `theorems` unless the config asks for TM data.
pub const TM_PROBE_XI_NORM: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    VerifyConnection,
    Integrate,
    Curvatures,
    Theorems,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::VerifyConnection => "verify-connection",
            Command::Integrate => "integrate",
            Command::Curvatures => "curvatures",
            Command::Theorems => "theorems",
        }
    }

    fn stem(self) -> &'static str {
        match self {
            Command::VerifyConnection => "connection",
            Command::Integrate => "integrate",
            Command::Curvatures => "curvatures",
            Command::Theorems => "theorems",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CommandOutput {
    pub report: Report,
    pub report_path: PathBuf,
    pub written: Vec<PathBuf>,
    pub seconds: f64,
}

impl CommandOutput {
    pub fn exit_code(&self) -> i32 {
        self.report.exit_code()
    }
}

pub fn run(command: Command, config: &ExperimentConfig) -> Result<CommandOutput> {
    match command {
        Command::VerifyConnection => cmd_verify_connection(config),
        Command::Integrate => cmd_integrate(config),
        Command::Curvatures => cmd_curvatures(config),
        Command::Theorems => cmd_theorems(config),
    }
}

/// 0 all-pass, 1 claim failure or degenerate input, 2 usage or validation error.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Validation(_) | Error::MalformedConfig(_) | Error::InvalidParameter { .. } => 2,
        _ => 1,
    }
}

fn finish(command: Command, config: &ExperimentConfig, verdicts: Vec<Verdict>, mut written: Vec<PathBuf>, start: Instant) -> Result<CommandOutput> {
    let report = Report::new(command.name(), config, verdicts);
    let report_path = config.out.join(format!("{}_report.json", command.stem()));
    report.write(&report_path)?;
    let seconds = start.elapsed().as_secs_f64();
    let timing_path = config.out.join(format!("{}_timing.json", command.stem()));
    fs::write(&timing_path, format!("{{\n  \"seconds\": {seconds}\n}}\n"))?;
    written.push(report_path.clone());
    written.push(timing_path);
    Ok(CommandOutput { report, report_path, written, seconds })
}

fn fmt(x: f64) -> String {
    format!("{x:e}")
}

fn connection_verdicts(config: &ExperimentConfig) -> Vec<Verdict> {
    let geometry = BergerSasaki::new(config.model(), config.params()).with_variant(config.variant());
    let r = random_connection_sweep(&geometry, config.xi_norm, config.samples, config.seed);
    let tol = config.tolerances.connection;
    let detail = format!("{} random jets at |xi| = {}", r.jets, config.xi_norm);
    vec![
        Verdict::check("connection-koszul", anchors::CONNECTION, r.koszul, tol).with_detail(detail.clone()),
        Verdict::check("connection-torsion", anchors::CONNECTION, r.torsion, tol).with_detail(detail.clone()),
        Verdict::check("connection-compatibility", anchors::CONNECTION, r.compatibility, tol).with_detail(detail),
    ]
}

pub fn cmd_verify_connection(config: &ExperimentConfig) -> Result<CommandOutput> {
    let start = Instant::now();
    fs::create_dir_all(&config.out)?;
    finish(Command::VerifyConnection, config, connection_verdicts(config), Vec::new(), start)
}

/// Explicit initial data from the config, or random data for `config.seed`.
pub fn initial_state(config: &ExperimentConfig, bundle: Bundle) -> Result<InitialState> {
    let params = config.params();
    match config.explicit_initial()? {
        Some((xi, w, u_dir)) => {
            let u_dir = u_dir.unwrap_or_else(|| FrameVector::random_unit(xi.dim(), &mut seeded_rng(config.seed)));
            prepare_initial(&xi, &w, &u_dir, &params, bundle)
        }
        None => random_initial_state(config.n, bundle, &params, config.xi_norm, config.seed),
    }
}

pub fn write_trajectory_csv(path: &Path, traj: &Trajectory, stride: usize) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    let dim = traj.model.dim();
    let mut header = vec!["sigma".to_string()];
    for prefix in ["u", "xi", "w"] {
        header.extend((1..=dim).map(|i| format!("{prefix}_{i}")));
    }
    header.extend(["c", "mu", "lambda", "xi_norm", "lifted_speed"].map(String::from));
    wtr.write_record(&header)?;
    for s in traj.samples.iter().step_by(stride.max(1)) {
        let st = &s.state;
        let d = &s.diagnostics;
        let mut row = vec![fmt(st.sigma)];
        for v in [&st.u, &st.xi, &st.w] {
            row.extend(v.as_slice().iter().map(|&x| fmt(x)));
        }
        row.extend([d.c, d.mu, d.lambda, d.xi_norm, d.lifted_speed].map(fmt));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_profile_csv(path: &Path, profile: &CurvatureProfile) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    let mut header = vec!["sigma".to_string()];
    header.extend((1..profile.p_max).map(|i| format!("k_{i}")));
    header.push("effective_rank".into());
    wtr.write_record(&header)?;
    for j in 0..profile.len() {
        let mut row = vec![fmt(profile.sigmas[j])];
        row.extend(profile.curvatures[j].iter().map(|&k| fmt(k)));
        row.push(profile.effective_rank[j].to_string());
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

fn drift_verdicts(bundle: Bundle, drift: &DriftReport, tol: f64) -> Vec<Verdict> {
    match bundle {
        Bundle::UnitTangent => vec![
            Verdict::check("drift-c", anchors::UNIT_CONSERVATION, drift.c, tol),
            Verdict::check("drift-mu", anchors::UNIT_CONSERVATION, drift.mu, tol),
            Verdict::check("drift-xi-norm", anchors::UNIT_CONSERVATION, drift.xi_norm, tol),
            Verdict::check("drift-radial", anchors::UNIT_CONSERVATION, drift.radial, tol),
            Verdict::check("drift-lifted-speed", anchors::UNIT_CONSERVATION, drift.lifted_speed, tol),
        ],
        Bundle::Tangent => vec![
            Verdict::info("drift-c", anchors::TM_GEODESICS, drift.c),
            Verdict::info("drift-mu", anchors::TM_GEODESICS, drift.mu),
            Verdict::info("drift-xi-norm", anchors::TM_GEODESICS, drift.xi_norm),
            Verdict::check("drift-lifted-speed", anchors::TM_GEODESICS, drift.lifted_speed, tol),
        ],
    }
}

pub fn cmd_integrate(config: &ExperimentConfig) -> Result<CommandOutput> {
    let start = Instant::now();
    fs::create_dir_all(&config.out)?;
    let initial = initial_state(config, config.bundle)?;
    let traj = integrate(&config.flow(config.bundle), &initial.state)?;
    let drift = conserved_report(&traj)?;
    let csv_path = config.out.join("trajectory.csv");
    write_trajectory_csv(&csv_path, &traj, config.sample_stride)?;
    let drift_path = config.out.join("drift.json");
    fs::write(&drift_path, serde_json::to_string_pretty(&drift)? + "\n")?;
    let mut verdicts = drift_verdicts(config.bundle, &drift, config.tolerances.conservation);
    if initial.vertical {
        verdicts.push(Verdict::info("vertical-geodesic", anchors::TM_GEODESICS, 1.0).with_detail("lambda^2 = 1, projection is a point"));
    }
    finish(Command::Integrate, config, verdicts, vec![csv_path, drift_path], start)
}

fn profile_stride(len: usize, points: usize) -> usize {
    ((len.saturating_sub(1)) / points.saturating_sub(1).max(1)).max(1)
}

/// `max_j | |x'(sigma_j)| - sqrt(1 - c_0^2 - delta^2 mu_0^2) |`
fn speed_residual(profile: &CurvatureProfile, traj: &Trajectory) -> f64 {
    let first = traj.samples[0].state.lambda_sq(&traj.params);
    let expected = (1.0 - first).max(0.0).sqrt();
    profile.chain_norms.iter().map(|row| (row[0] - expected).abs()).fold(0.0, f64::max)
}

fn chain_norm_residual(profile: &CurvatureProfile) -> f64 {
    (1..=profile.p_max.min(CHAIN_NORM_P_MAX))
        .map(|p| profile.chain_norm_spread(p))
        .fold(0.0, f64::max)
}

/// Whether the vanishing claim applies, or why not.
fn vanishing_applicability(config: &ExperimentConfig) -> std::result::Result<(), String> {
    if config.n < 4 {
        Err(format!("inapplicable (k6 undefined for n = {})", config.n))
    } else if config.m <= 0.0 {
        Err(format!("inapplicable (m = {} is not complex projective space)", config.m))
    } else if config.p_max < VANISHING_INDEX + 1 {
        Err(format!("inapplicable (p_max = {} < 7)", config.p_max))
    } else {
        Ok(())
    }
}

pub fn cmd_curvatures(config: &ExperimentConfig) -> Result<CommandOutput> {
    let start = Instant::now();
    fs::create_dir_all(&config.out)?;
    let initial = initial_state(config, config.bundle)?;
    if initial.vertical {
        return Err(Error::DegenerateProjection);
    }
    let traj = integrate(&config.flow(config.bundle), &initial.state)?;
    let stride = profile_stride(traj.len(), config.profile_points);
    let source = match config.bundle {
        Bundle::UnitTangent => ChainSource::Algebraic,
        Bundle::Tangent => ChainSource::Numeric,
    };
    let profile = curvature_profile(&traj, config.p_max, config.rank_tol, stride, source)?;
    let csv_path = config.out.join("profile.csv");
    write_profile_csv(&csv_path, &profile)?;
    let tol = &config.tolerances;

    let mut verdicts = Vec::new();
    match config.bundle {
        Bundle::Tangent => {
            let variation = profile.relative_variation(1);
            verdicts.push(
                Verdict::not_applicable("curvature-constancy", anchors::CONSTANT_CURVATURES, "not-applicable (TM)")
                    .with_detail(format!("k_1 relative variation {}", fmt(variation))),
            );
            verdicts.push(Verdict::info("tm-k1-variation", anchors::CONSTANT_CURVATURES, variation));
        }
        Bundle::UnitTangent => {
            verdicts.push(Verdict::from_theorem(&constancy_verdict(&profile, tol.constancy), anchors::CONSTANT_CURVATURES));
            verdicts.extend(vanishing_verdicts(config, &profile)?);
            verdicts.push(Verdict::check("chain-norm-constancy", anchors::CHAIN_NORMS, chain_norm_residual(&profile), tol.chain_norm));
            verdicts.push(Verdict::check("projection-speed", anchors::PROJECTION_SPEED, speed_residual(&profile, &traj), tol.speed));
            let state = &traj.samples[0].state;
            let spans = span_residual(&config.model(), &config.params(), &state.xi, &state.w, SPAN_Q_MAX)?;
            verdicts.push(Verdict::check("span-identities", anchors::SPAN_IDENTITIES, spans.worst(), tol.span));
        }
    }
    finish(Command::Curvatures, config, verdicts, vec![csv_path], start)
}

fn vanishing_verdicts(config: &ExperimentConfig, profile: &CurvatureProfile) -> Result<Vec<Verdict>> {
    if let Err(why) = vanishing_applicability(config) {
        return Ok(vec![
            Verdict::not_applicable("k6-vanishing", anchors::VANISHING_CURVATURES, why.clone()),
            Verdict::not_applicable("gram-ratio-D8-over-D7", anchors::VANISHING_CURVATURES, why),
        ]);
    }
    let tol = &config.tolerances;
    let mut out = vec![Verdict::from_theorem(
        &vanishing_verdict(profile, &config.model(), tol.vanishing)?,
        anchors::VANISHING_CURVATURES,
    )];
    if config.p_max >= 8 {
        out.push(Verdict::from_theorem(&rank_collapse_verdict(profile, 7, tol.rank_collapse)?, anchors::VANISHING_CURVATURES));
    } else {
        out.push(Verdict::not_applicable("gram-ratio-D8-over-D7", anchors::VANISHING_CURVATURES, "p_max < 8"));
    }
    Ok(out)
}

/// Residuals of every unit-bundle claim for one random initial condition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub lambda_sq: f64,
    pub drift: f64,
    pub parallel: f64,
    pub oracle: f64,
    pub chain_norm: f64,
    pub speed: f64,
    pub constancy: f64,
    pub k6_scaled: f64,
    pub gram_ratio: f64,
    pub first_vanishing_index: Option<usize>,
    pub span: f64,
    pub error: Option<String>,
}

impl SeedOutcome {
    fn failed(seed: u64, err: &Error) -> Self {
        Self {
            seed,
            lambda_sq: f64::NAN,
            drift: f64::NAN,
            parallel: f64::NAN,
            oracle: f64::NAN,
            chain_norm: f64::NAN,
            speed: f64::NAN,
            constancy: f64::NAN,
            k6_scaled: f64::NAN,
            gram_ratio: f64::NAN,
            first_vanishing_index: None,
            span: f64::NAN,
            error: Some(err.to_string()),
        }
    }
}

/// Relative error of the central-difference chain against the Krylov chain
/// at the middle sample, over `p <= ORACLE_P_MAX`.
pub fn oracle_residual(traj: &Trajectory, p_max: usize) -> Result<f64> {
    let p = p_max.min(ORACLE_P_MAX);
    let center = traj.len() / 2;
    let numeric = numeric_chain(traj, center, p)?;
    let exact = algebraic_chain(&traj.model, &traj.params, &traj.samples[center].state, traj.bundle, p)?;
    let scale = exact.vectors.iter().map(FrameVector::norm).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    Ok((1..=p)
        .map(|k| (numeric.derivative(k) - exact.derivative(k)).norm() / exact.derivative(k).norm().max(1e-12 * scale))
        .fold(0.0, f64::max))
}

fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedOutcome> {
    let params = config.params();
    let initial = random_initial_state(config.n, Bundle::UnitTangent, &params, 1.0, seed)?;
    let traj = integrate(&config.flow(Bundle::UnitTangent), &initial.state)?;
    let drift = conserved_report(&traj)?.unit_bundle_worst();
    let parallel = twisted_rate_check(&traj)?.max_residual;
    let oracle = oracle_residual(&traj, config.p_max)?;
    let profile = curvature_profile(
        &traj,
        config.p_max,
        config.rank_tol,
        profile_stride(traj.len(), config.profile_points),
        ChainSource::Algebraic,
    )?;
    let constancy = constancy_verdict(&profile, config.tolerances.constancy).residual;
    let (k6_scaled, first_vanishing_index, gram_ratio) = match vanishing_applicability(config) {
        Ok(()) => {
            let v = vanishing_verdict(&profile, &config.model(), config.tolerances.vanishing)?;
            let ratio = if config.p_max >= 8 {
                rank_collapse_verdict(&profile, 7, config.tolerances.rank_collapse)?.residual
            } else {
                f64::NAN
            };
            (v.residual, v.first_vanishing_index, ratio)
        }
        Err(_) => (f64::NAN, None, f64::NAN),
    };
    let state = &initial.state;
    let span = span_residual(&config.model(), &params, &state.xi, &state.w, SPAN_Q_MAX)?.worst();
    Ok(SeedOutcome {
        seed,
        lambda_sq: state.lambda_sq(&params),
        drift,
        parallel,
        oracle,
        chain_norm: chain_norm_residual(&profile),
        speed: speed_residual(&profile, &traj),
        constancy,
        k6_scaled,
        gram_ratio,
        first_vanishing_index,
        span,
        error: None,
    })
}

/// Seed sweep of the unit-bundle claims, sorted by seed.
pub fn seed_sweep(config: &ExperimentConfig) -> Vec<SeedOutcome> {
    let seeds: Vec<u64> = (0..config.sweep as u64).map(|i| config.seed.wrapping_add(i)).collect();
    let mut out: Vec<SeedOutcome> = seeds
        .par_iter()
        .map(|&seed| run_seed(config, seed).unwrap_or_else(|e| SeedOutcome::failed(seed, &e)))
        .collect();
    out.sort_by_key(|o| o.seed);
    out
}

fn aggregate(claim: &str, anchor: &str, outcomes: &[SeedOutcome], tol: f64, pick: impl Fn(&SeedOutcome) -> f64) -> Verdict {
    let mut worst = 0.0_f64;
    let mut failing = Vec::new();
    for o in outcomes {
        let r = pick(o);
        if r.is_nan() || r > worst {
            worst = if r.is_nan() { f64::NAN } else { r.max(worst) };
        }
        if r.is_nan() || r > tol {
            failing.push(match &o.error {
                Some(e) => format!("seed {}: {e}", o.seed),
                None => format!("seed {}: {}", o.seed, fmt(r)),
            });
        }
    }
    let passed = outcomes.len() - failing.len();
    let mut detail = format!("{passed}/{} seeds pass", outcomes.len());
    if !failing.is_empty() {
        detail.push_str("; failing: ");
        detail.push_str(&failing.join(", "));
    }
    Verdict::check(claim, anchor, worst, tol).with_detail(detail)
}

fn write_seed_csv(path: &Path, outcomes: &[SeedOutcome]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record([
        "seed", "lambda_sq", "drift", "parallel", "oracle", "chain_norm", "speed", "constancy", "k6_scaled",
        "gram_ratio", "first_vanishing_index", "span", "error",
    ])?;
    for o in outcomes {
        let mut row = vec![o.seed.to_string()];
        row.extend(
            [o.lambda_sq, o.drift, o.parallel, o.oracle, o.chain_norm, o.speed, o.constancy, o.k6_scaled, o.gram_ratio]
                .map(fmt),
        );
        row.push(o.first_vanishing_index.map(|i| i.to_string()).unwrap_or_default());
        row.push(fmt(o.span));
        row.push(o.error.clone().unwrap_or_default());
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Tangent-bundle probe: rate of the twisted operator against its closed
/// form, and the variation of `k_1` from numeric chains. Reported, not judged.
fn tangent_probe(config: &ExperimentConfig) -> Vec<Verdict> {
    let xi_norm = if config.bundle == Bundle::Tangent { config.xi_norm } else { TM_PROBE_XI_NORM };
    let probe = || -> Result<Vec<Verdict>> {
        let params = config.params();
        let initial = random_initial_state(config.n, Bundle::Tangent, &params, xi_norm, config.seed)?;
        let traj = integrate(&config.flow(Bundle::Tangent), &initial.state)?;
        let drift = conserved_report(&traj)?;
        let rate = twisted_rate_check(&traj)?;
        let expected = rate.samples.iter().map(|s| s.expected_norm).fold(0.0, f64::max);
        let profile = curvature_profile(
            &traj,
            config.p_max.min(3),
            config.rank_tol,
            profile_stride(traj.len(), config.profile_points),
            ChainSource::Numeric,
        )?;
        Ok(vec![
            Verdict::check("tm-lifted-speed", anchors::TM_GEODESICS, drift.lifted_speed, config.tolerances.conservation),
            Verdict::info("tm-drift-c", anchors::TM_GEODESICS, drift.c),
            Verdict::info("tm-drift-mu", anchors::TM_GEODESICS, drift.mu),
            Verdict::info("tm-rate-closed-form", anchors::TM_RATE, rate.max_relative.unwrap_or(f64::NAN)).with_detail(format!(
                "|xi_0| = {xi_norm}; max |dRt/dsigma| measured {}, closed form {}",
                fmt(rate.max_measured_norm),
                fmt(expected)
            )),
            Verdict::info("tm-k1-variation", anchors::CONSTANT_CURVATURES, profile.relative_variation(1)),
        ])
    };
    probe().unwrap_or_else(|e| vec![Verdict::info("tm-probe", anchors::TM_GEODESICS, f64::NAN).with_detail(e.to_string())])
}

pub fn cmd_theorems(config: &ExperimentConfig) -> Result<CommandOutput> {
    let start = Instant::now();
    fs::create_dir_all(&config.out)?;
    let tol = &config.tolerances;
    let mut verdicts = connection_verdicts(config);

    let outcomes = seed_sweep(config);
    let seeds_path = config.out.join("theorems_seeds.csv");
    write_seed_csv(&seeds_path, &outcomes)?;
    verdicts.push(aggregate("conservation", anchors::UNIT_CONSERVATION, &outcomes, tol.conservation, |o| o.drift));
    verdicts.push(aggregate("parallel-operator", anchors::PARALLEL_OPERATOR, &outcomes, tol.parallel, |o| o.parallel));
    verdicts.push(aggregate("krylov-oracle", anchors::KRYLOV_CHAIN, &outcomes, tol.oracle, |o| o.oracle));
    verdicts.push(aggregate("chain-norm-constancy", anchors::CHAIN_NORMS, &outcomes, tol.chain_norm, |o| o.chain_norm));
    verdicts.push(aggregate("projection-speed", anchors::PROJECTION_SPEED, &outcomes, tol.speed, |o| o.speed));
    verdicts.push(aggregate("curvature-constancy", anchors::CONSTANT_CURVATURES, &outcomes, tol.constancy, |o| o.constancy));
    match vanishing_applicability(config) {
        Ok(()) => {
            let mut v = aggregate("k6-vanishing", anchors::VANISHING_CURVATURES, &outcomes, tol.vanishing, |o| o.k6_scaled);
            let lo = outcomes.iter().filter_map(|o| o.first_vanishing_index).min();
            let hi = outcomes.iter().filter_map(|o| o.first_vanishing_index).max();
            if let (Some(lo), Some(hi)) = (lo, hi) {
                let detail = v.detail.take().unwrap_or_default();
                v.detail = Some(format!("{detail}; first vanishing index observed in [{lo}, {hi}]"));
            }
            verdicts.push(v);
            if config.p_max >= 8 {
                verdicts.push(aggregate("gram-ratio-D8-over-D7", anchors::VANISHING_CURVATURES, &outcomes, tol.rank_collapse, |o| o.gram_ratio));
            } else {
                verdicts.push(Verdict::not_applicable("gram-ratio-D8-over-D7", anchors::VANISHING_CURVATURES, "p_max < 8"));
            }
        }
        Err(why) => {
            verdicts.push(Verdict::not_applicable("k6-vanishing", anchors::VANISHING_CURVATURES, why.clone()));
            verdicts.push(Verdict::not_applicable("gram-ratio-D8-over-D7", anchors::VANISHING_CURVATURES, why));
        }
    }
    verdicts.push(aggregate("span-identities", anchors::SPAN_IDENTITIES, &outcomes, tol.span, |o| o.span));
    verdicts.extend(tangent_probe(config));
    finish(Command::Theorems, config, verdicts, vec![seeds_path], start)
}

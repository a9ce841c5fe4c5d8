//! Geodesics of the deformed metric on `TM` and on the unit tangent bundle.
//!
//! A bundle curve `(x(sigma), xi(sigma))` is tracked in a frame parallel along
//! its projection. Curvature and `J` have constant components there, so the
//! geodesic system closes on `(u, xi, w)`, the components of `x'`, `xi` and
//! `xi' = nabla_{x'} xi`:
//!
//! ```text
//! u'  = -Rt(xi, w) u
//! xi' = w
//! w'  = -2 d^2 mu (Jw - d^2/(1 + d^2|xi|^2) <w, xi> J xi)      (TM)
//! w'  = -c^2 xi - 2 d^2 mu (Jw + mu xi)                          (unit bundle)
//! ```
//!
//! with `Rt(xi, w) = R(xi, w) + d^2 mu R(xi, J xi)`, `c = |w|` and
//! `mu = <w, J xi>`. The base point itself is never reconstructed.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space_form::{dot, j_into, BergerParams, FrameVector, SpaceFormModel};

/// Constraint defect above which `rhs_t1m` refuses a state.
pub const UNIT_BUNDLE_RHS_TOLERANCE: f64 = 1e-6;
/// Constraint drift at which unit-bundle integration aborts.
pub const UNIT_BUNDLE_DRIFT_LIMIT: f64 = 1e-4;
/// `lambda^2` within this distance of 1 is treated as a vertical geodesic.
pub const VERTICAL_SPEED_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Bundle {
    #[serde(rename = "TM")]
    Tangent,
    #[serde(rename = "T1M")]
    UnitTangent,
}

impl fmt::Display for Bundle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Bundle::Tangent => "TM",
            Bundle::UnitTangent => "T1M",
        })
    }
}

impl FromStr for Bundle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "TM" | "tm" => Ok(Bundle::Tangent),
            "T1M" | "t1m" => Ok(Bundle::UnitTangent),
            other => Err(format!("unknown bundle `{other}` (expected TM or T1M)")),
        }
    }
}

/// Parallel-frame reduction of a point on a bundle curve.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleState {
    pub sigma: f64,
    /// components of `x'`
    pub u: FrameVector,
    pub xi: FrameVector,
    /// components of `xi' = nabla_{x'} xi`
    pub w: FrameVector,
}

impl BundleState {
    pub fn new(sigma: f64, u: FrameVector, xi: FrameVector, w: FrameVector) -> Result<Self> {
        for v in [&xi, &w] {
            if v.dim() != u.dim() {
                return Err(Error::DimensionMismatch {
                    expected: u.dim(),
                    actual: v.dim(),
                });
            }
        }
        if !sigma.is_finite() {
            return Err(Error::NonFinite("sigma"));
        }
        Ok(Self { sigma, u, xi, w })
    }

    pub fn dim(&self) -> usize {
        self.u.dim()
    }

    /// `c = |xi'|`
    pub fn c(&self) -> f64 {
        self.w.norm()
    }

    /// `mu = <xi', J xi>`
    pub fn mu(&self) -> f64 {
        self.w.dot(&self.xi.j())
    }

    /// `<xi, xi'>`
    pub fn radial(&self) -> f64 {
        self.xi.dot(&self.w)
    }

    pub fn lambda_sq(&self, params: &BergerParams) -> f64 {
        let mu = self.mu();
        self.w.norm_squared() + params.delta_sq() * mu * mu
    }

    /// Squared length of `Gamma' = (x')^h + (xi')^v` in the deformed metric.
    pub fn lifted_speed_sq(&self, params: &BergerParams) -> f64 {
        self.u.norm_squared() + self.lambda_sq(params)
    }

    pub fn diagnostics(&self, params: &BergerParams) -> Diagnostics {
        Diagnostics {
            c: self.c(),
            mu: self.mu(),
            lambda: self.lambda_sq(params).sqrt(),
            xi_norm: self.xi.norm(),
            radial: self.radial(),
            lifted_speed: self.lifted_speed_sq(params).sqrt(),
        }
    }

    /// `(|xi| - 1, <xi, w>)`
    pub fn unit_bundle_defects(&self) -> (f64, f64) {
        (self.xi.norm() - 1.0, self.radial())
    }

    pub fn is_finite(&self) -> bool {
        self.sigma.is_finite() && self.u.is_finite() && self.xi.is_finite() && self.w.is_finite()
    }

    fn pack(&self) -> Vec<f64> {
        let mut y = Vec::with_capacity(3 * self.dim());
        y.extend_from_slice(self.u.as_slice());
        y.extend_from_slice(self.xi.as_slice());
        y.extend_from_slice(self.w.as_slice());
        y
    }

    fn unpack(sigma: f64, y: &[f64]) -> Self {
        let d = y.len() / 3;
        Self {
            sigma,
            u: FrameVector::from_slice(&y[..d]),
            xi: FrameVector::from_slice(&y[d..2 * d]),
            w: FrameVector::from_slice(&y[2 * d..]),
        }
    }
}

/// Derived scalar quantities of a state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Diagnostics {
    pub c: f64,
    pub mu: f64,
    pub lambda: f64,
    pub xi_norm: f64,
    pub radial: f64,
    pub lifted_speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateDerivative {
    pub du: FrameVector,
    pub dxi: FrameVector,
    pub dw: FrameVector,
}

struct Rhs<'a> {
    bundle: Bundle,
    model: &'a SpaceFormModel,
    params: &'a BergerParams,
    dir: Vec<f64>,
    jw: Vec<f64>,
}

impl<'a> Rhs<'a> {
    fn new(bundle: Bundle, model: &'a SpaceFormModel, params: &'a BergerParams) -> Self {
        let d = model.dim();
        Self {
            bundle,
            model,
            params,
            dir: vec![0.0; d],
            jw: vec![0.0; d],
        }
    }

    /// `out = f(y)` for the packed state `y = [u | xi | w]`.
    fn eval(&mut self, y: &[f64], out: &mut [f64]) {
        let d = y.len() / 3;
        let (u, rest) = y.split_at(d);
        let (xi, w) = rest.split_at(d);
        let (du, rest) = out.split_at_mut(d);
        let (dxi, dw) = rest.split_at_mut(d);
        let d2 = self.params.delta_sq();

        SpaceFormModel::twisted_direction_into(self.params, xi, w, &mut self.dir);
        self.model.riemann_into(xi, &self.dir, u, du);
        du.iter_mut().for_each(|v| *v = -*v);
        dxi.copy_from_slice(w);

        // J xi lands in dw, J w in self.jw
        j_into(xi, dw);
        j_into(w, &mut self.jw);
        let mu = dot(w, dw);
        match self.bundle {
            Bundle::Tangent => {
                let k = d2 / (1.0 + d2 * dot(xi, xi));
                let nu = dot(w, xi);
                let s = -2.0 * d2 * mu;
                for (dwi, jwi) in dw.iter_mut().zip(&self.jw) {
                    *dwi = s * (jwi - k * nu * *dwi);
                }
            }
            Bundle::UnitTangent => {
                let c2 = dot(w, w);
                for ((dwi, jwi), xii) in dw.iter_mut().zip(&self.jw).zip(xi) {
                    *dwi = -c2 * xii - 2.0 * d2 * mu * (jwi + mu * xii);
                }
            }
        }
    }
}

fn rhs(bundle: Bundle, model: &SpaceFormModel, params: &BergerParams, state: &BundleState) -> Result<StateDerivative> {
    model.check_all(&[&state.u, &state.xi, &state.w])?;
    let y = state.pack();
    let mut out = vec![0.0; y.len()];
    Rhs::new(bundle, model, params).eval(&y, &mut out);
    let d = state.dim();
    Ok(StateDerivative {
        du: FrameVector::from_slice(&out[..d]),
        dxi: FrameVector::from_slice(&out[d..2 * d]),
        dw: FrameVector::from_slice(&out[2 * d..]),
    })
}

/// Geodesic vector field of the deformed metric on `TM`.
pub fn rhs_tm(model: &SpaceFormModel, params: &BergerParams, state: &BundleState) -> Result<StateDerivative> {
    rhs(Bundle::Tangent, model, params, state)
}

/// Geodesic vector field on the unit tangent bundle; `c` and `mu` are taken
/// from the state itself.
pub fn rhs_t1m(model: &SpaceFormModel, params: &BergerParams, state: &BundleState) -> Result<StateDerivative> {
    let (norm_defect, radial) = state.unit_bundle_defects();
    if norm_defect.abs() > UNIT_BUNDLE_RHS_TOLERANCE || radial.abs() > UNIT_BUNDLE_RHS_TOLERANCE {
        return Err(Error::ConstraintViolation { norm_defect, radial });
    }
    rhs(Bundle::UnitTangent, model, params, state)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialState {
    pub state: BundleState,
    /// `lambda^2 = 1`: the bundle curve is vertical and projects to a point.
    pub vertical: bool,
}

/// Builds a unit-speed initial state from raw fiber data.
///
/// On the unit bundle `xi0` is normalized and `w0` projected orthogonally to
/// it first. The horizontal speed is then fixed by
/// `|u|^2 = 1 - |w|^2 - delta^2 <w, J xi>^2`.
pub fn prepare_initial(
    xi0: &FrameVector,
    w0: &FrameVector,
    u_dir: &FrameVector,
    params: &BergerParams,
    bundle: Bundle,
) -> Result<InitialState> {
    for v in [w0, u_dir] {
        if v.dim() != xi0.dim() {
            return Err(Error::DimensionMismatch {
                expected: xi0.dim(),
                actual: v.dim(),
            });
        }
    }
    let xi_norm = xi0.norm();
    if xi_norm == 0.0 {
        return Err(Error::ZeroFiberVector);
    }
    let (xi, w) = match bundle {
        Bundle::Tangent => (xi0.clone(), w0.clone()),
        Bundle::UnitTangent => {
            let xi = xi0 * (1.0 / xi_norm);
            let mut w = w0.clone();
            w.add_scaled(-w0.dot(&xi), &xi);
            (xi, w)
        }
    };
    let mu = w.dot(&xi.j());
    let lambda_sq = w.norm_squared() + params.delta_sq() * mu * mu;
    if lambda_sq > 1.0 + VERTICAL_SPEED_TOLERANCE {
        return Err(Error::InfeasibleSpeed { lambda_sq });
    }
    let dim = xi.dim();
    if (1.0 - lambda_sq).abs() <= VERTICAL_SPEED_TOLERANCE {
        return Ok(InitialState {
            state: BundleState::new(0.0, FrameVector::zeros(dim), xi, w)?,
            vertical: true,
        });
    }
    let dir_norm = u_dir.norm();
    if dir_norm == 0.0 {
        return Err(Error::MissingDirection { lambda_sq });
    }
    let u = u_dir * ((1.0 - lambda_sq).sqrt() / dir_norm);
    Ok(InitialState {
        state: BundleState::new(0.0, u, xi, w)?,
        vertical: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    pub bundle: Bundle,
    pub model: SpaceFormModel,
    pub params: BergerParams,
    pub step: f64,
    pub sigma_max: f64,
    pub sample_stride: usize,
    /// Re-project onto `|xi| = 1`, `<xi, w> = 0` after every unit-bundle step.
    pub renormalize: bool,
}

impl FlowConfig {
    pub fn new(bundle: Bundle, model: SpaceFormModel, params: BergerParams, step: f64, sigma_max: f64) -> Self {
        Self {
            bundle,
            model,
            params,
            step,
            sigma_max,
            sample_stride: 1,
            renormalize: false,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.sample_stride = stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::invalid("step", "must be positive and finite"));
        }
        if !(self.sigma_max > 0.0 && self.sigma_max.is_finite()) {
            return Err(Error::invalid("sigma_max", "must be positive and finite"));
        }
        if self.step > self.sigma_max {
            return Err(Error::invalid("step", "must not exceed sigma_max"));
        }
        if self.sample_stride == 0 {
            return Err(Error::invalid("sample_stride", "must be >= 1"));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.sigma_max / self.step).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub state: BundleState,
    pub diagnostics: Diagnostics,
}

/// Samples of an integrated bundle geodesic, uniformly spaced in `sigma`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub bundle: Bundle,
    pub model: SpaceFormModel,
    pub params: BergerParams,
    /// `sigma` distance between consecutive samples
    pub spacing: f64,
    pub samples: Vec<Sample>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn first(&self) -> Option<&BundleState> {
        self.samples.first().map(|s| &s.state)
    }

    pub fn last(&self) -> Option<&BundleState> {
        self.samples.last().map(|s| &s.state)
    }

    /// Every `stride`-th sample, starting with the first.
    pub fn thinned(&self, stride: usize) -> Trajectory {
        let stride = stride.max(1);
        Trajectory {
            bundle: self.bundle,
            model: self.model,
            params: self.params,
            spacing: self.spacing * stride as f64,
            samples: self.samples.iter().step_by(stride).cloned().collect(),
        }
    }
}

fn rk4_step(rhs: &mut Rhs<'_>, y: &mut [f64], h: f64, k: &mut [Vec<f64>; 4], tmp: &mut [f64]) {
    let n = y.len();
    rhs.eval(y, &mut k[0]);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k[0][i];
    }
    rhs.eval(tmp, &mut k[1]);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k[1][i];
    }
    rhs.eval(tmp, &mut k[2]);
    for i in 0..n {
        tmp[i] = y[i] + h * k[2][i];
    }
    rhs.eval(tmp, &mut k[3]);
    for i in 0..n {
        y[i] += h / 6.0 * (k[0][i] + 2.0 * (k[1][i] + k[2][i]) + k[3][i]);
    }
}

fn project_to_unit_bundle(y: &mut [f64]) {
    let d = y.len() / 3;
    let (_, rest) = y.split_at_mut(d);
    let (xi, w) = rest.split_at_mut(d);
    let norm = dot(xi, xi).sqrt();
    xi.iter_mut().for_each(|v| *v /= norm);
    let radial = dot(xi, w);
    for (wi, xii) in w.iter_mut().zip(xi.iter()) {
        *wi -= radial * xii;
    }
}

/// Classical fourth-order Runge-Kutta integration with a fixed step.
pub fn integrate(config: &FlowConfig, state0: &BundleState) -> Result<Trajectory> {
    config.validate()?;
    config.model.check_all(&[&state0.u, &state0.xi, &state0.w])?;
    if !state0.is_finite() {
        return Err(Error::NonFiniteState { last_sigma: state0.sigma });
    }
    if config.bundle == Bundle::UnitTangent {
        let (norm_defect, radial) = state0.unit_bundle_defects();
        if norm_defect.abs() > UNIT_BUNDLE_RHS_TOLERANCE || radial.abs() > UNIT_BUNDLE_RHS_TOLERANCE {
            return Err(Error::ConstraintViolation { norm_defect, radial });
        }
    }

    let params = config.params;
    let mut rhs = Rhs::new(config.bundle, &config.model, &params);
    let mut y = state0.pack();
    let mut k: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; y.len()]);
    let mut tmp = vec![0.0; y.len()];
    let steps = config.steps();
    let mut samples = Vec::with_capacity(steps / config.sample_stride + 1);
    samples.push(Sample {
        state: state0.clone(),
        diagnostics: state0.diagnostics(&params),
    });

    let mut last_sigma = state0.sigma;
    for i in 1..=steps {
        rk4_step(&mut rhs, &mut y, config.step, &mut k, &mut tmp);
        let sigma = state0.sigma + i as f64 * config.step;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { last_sigma });
        }
        if config.bundle == Bundle::UnitTangent {
            if config.renormalize {
                project_to_unit_bundle(&mut y);
            }
            let d = y.len() / 3;
            let xi = &y[d..2 * d];
            let drift = (dot(xi, xi).sqrt() - 1.0).abs().max(dot(xi, &y[2 * d..]).abs());
            if drift > UNIT_BUNDLE_DRIFT_LIMIT {
                return Err(Error::ConstraintDrift { sigma, drift });
            }
        }
        last_sigma = sigma;
        if i % config.sample_stride == 0 {
            let state = BundleState::unpack(sigma, &y);
            let diagnostics = state.diagnostics(&params);
            samples.push(Sample { state, diagnostics });
        }
    }

    Ok(Trajectory {
        bundle: config.bundle,
        model: config.model,
        params,
        spacing: config.step * config.sample_stride as f64,
        samples,
    })
}

/// Largest deviation of each monitored quantity from its initial value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct DriftReport {
    pub c: f64,
    pub mu: f64,
    pub xi_norm: f64,
    pub radial: f64,
    pub lifted_speed: f64,
    pub lambda: f64,
}

impl DriftReport {
    /// Worst drift among the quantities conserved on the unit bundle.
    pub fn unit_bundle_worst(&self) -> f64 {
        [self.c, self.mu, self.xi_norm, self.radial, self.lifted_speed, self.lambda]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

pub fn conserved_report(traj: &Trajectory) -> Result<DriftReport> {
    let first = traj
        .samples
        .first()
        .ok_or(Error::TooFewSamples { needed: 1, actual: 0 })?
        .diagnostics;
    let mut out = DriftReport::default();
    for s in &traj.samples {
        let d = s.diagnostics;
        out.c = out.c.max((d.c - first.c).abs());
        out.mu = out.mu.max((d.mu - first.mu).abs());
        out.xi_norm = out.xi_norm.max((d.xi_norm - first.xi_norm).abs());
        out.radial = out.radial.max((d.radial - first.radial).abs());
        out.lifted_speed = out.lifted_speed.max((d.lifted_speed - first.lifted_speed).abs());
        out.lambda = out.lambda.max((d.lambda - first.lambda).abs());
    }
    Ok(out)
}

/// Closed-form `sigma`-rate of the twisted operator along `TM` geodesics as
/// stated in the literature:
/// `2 d^6 <w, J xi> <w, xi> (1 - |xi|^2) / (1 + d^2 |xi|^2) R(xi, J xi)`.
///
/// Direct differentiation of the `TM` system gives zero instead; see
/// [`twisted_rate_check`], which measures the rate independently.
pub fn tm_rate_closed_form(
    model: &SpaceFormModel,
    params: &BergerParams,
    xi: &FrameVector,
    w: &FrameVector,
) -> Result<DMatrix<f64>> {
    model.check_all(&[xi, w])?;
    let d2 = params.delta_sq();
    let xi_sq = xi.norm_squared();
    let coeff = 2.0 * d2 * d2 * d2 * w.dot(&xi.j()) * w.dot(xi) * (1.0 - xi_sq) / (1.0 + d2 * xi_sq);
    Ok(model.riemann_matrix(xi, &xi.j())? * coeff)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateSample {
    pub sigma: f64,
    /// Frobenius norm of the central-difference rate
    pub measured_norm: f64,
    /// Frobenius norm of the expected rate (zero on the unit bundle)
    pub expected_norm: f64,
    /// Frobenius norm of `measured - expected`
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateCheck {
    pub bundle: Bundle,
    pub samples: Vec<RateSample>,
    pub max_measured_norm: f64,
    pub max_residual: f64,
    /// Largest `residual / expected_norm` over samples where the expected rate is nonzero.
    pub max_relative: Option<f64>,
}

/// Central finite difference of the twisted operator matrix along the
/// trajectory, compared against zero (unit bundle) or [`tm_rate_closed_form`] (`TM`).
pub fn twisted_rate_check(traj: &Trajectory) -> Result<RateCheck> {
    if traj.len() < 3 {
        return Err(Error::TooFewSamples { needed: 3, actual: traj.len() });
    }
    let (model, params) = (&traj.model, &traj.params);
    let matrices: Vec<DMatrix<f64>> = traj
        .samples
        .iter()
        .map(|s| model.twisted_matrix_unchecked(params, s.state.xi.as_slice(), s.state.w.as_slice()))
        .collect();
    let mut samples = Vec::with_capacity(traj.len() - 2);
    for j in 1..traj.len() - 1 {
        let state = &traj.samples[j].state;
        let dsigma = traj.samples[j + 1].state.sigma - traj.samples[j - 1].state.sigma;
        let measured = (&matrices[j + 1] - &matrices[j - 1]) / dsigma;
        let expected = match traj.bundle {
            Bundle::UnitTangent => DMatrix::zeros(model.dim(), model.dim()),
            Bundle::Tangent => tm_rate_closed_form(model, params, &state.xi, &state.w)?,
        };
        samples.push(RateSample {
            sigma: state.sigma,
            measured_norm: measured.norm(),
            expected_norm: expected.norm(),
            residual: (&measured - &expected).norm(),
        });
    }
    let max_measured_norm = samples.iter().map(|s| s.measured_norm).fold(0.0, f64::max);
    let max_residual = samples.iter().map(|s| s.residual).fold(0.0, f64::max);
    let max_relative = samples
        .iter()
        .filter(|s| s.expected_norm > 0.0)
        .map(|s| s.residual / s.expected_norm)
        .reduce(f64::max);
    Ok(RateCheck {
        bundle: traj.bundle,
        samples,
        max_measured_norm,
        max_residual,
        max_relative,
    })
}

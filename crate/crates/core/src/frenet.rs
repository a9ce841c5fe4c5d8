//! Frenet invariants of projected geodesics.
//!
//! Along a unit-bundle geodesic the twisted operator `Rt` is parallel, so the
//! covariant derivatives of the projection form the Krylov sequence
//! `x^(p+1) = (-Rt)^p x'`. Curvatures come from Gram determinants of that
//! sequence, computed through Gram-Schmidt residuals rather than determinants.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{Bundle, BundleState, Trajectory, UNIT_BUNDLE_RHS_TOLERANCE};
use crate::space_form::{BergerParams, FrameVector, SpaceFormModel};

pub const DEFAULT_RANK_TOL: f64 = 1e-10;
/// Relative scale below which a reference curvature is treated as zero.
pub const CURVATURE_FLOOR: f64 = 1e-12;
/// Index of the first curvature expected to vanish on complex projective space.
pub const VANISHING_INDEX: usize = 6;

/// Covariant derivatives `x^(1), ..., x^(p_max)` of the projected curve at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeChain {
    pub at_sigma: f64,
    pub vectors: Vec<FrameVector>,
}

impl DerivativeChain {
    pub fn new(at_sigma: f64, vectors: Vec<FrameVector>) -> Result<Self> {
        if vectors.len() < 2 {
            return Err(Error::invalid("p_max", "a derivative chain needs at least 2 vectors"));
        }
        let dim = vectors[0].dim();
        for v in &vectors {
            if v.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, actual: v.dim() });
            }
            if !v.is_finite() {
                return Err(Error::NonFinite("derivative chain"));
            }
        }
        Ok(Self { at_sigma, vectors })
    }

    pub fn p_max(&self) -> usize {
        self.vectors.len()
    }

    /// `x^(p)`, 1-based.
    pub fn derivative(&self, p: usize) -> &FrameVector {
        &self.vectors[p - 1]
    }

    pub fn norms(&self) -> Vec<f64> {
        self.vectors.iter().map(FrameVector::norm).collect()
    }
}

fn check_p_max(p_max: usize) -> Result<()> {
    if p_max < 2 {
        return Err(Error::invalid("p_max", "must be >= 2"));
    }
    Ok(())
}

fn check_unit_bundle(state: &BundleState) -> Result<()> {
    let (norm_defect, radial) = state.unit_bundle_defects();
    if norm_defect.abs() > UNIT_BUNDLE_RHS_TOLERANCE || radial.abs() > UNIT_BUNDLE_RHS_TOLERANCE {
        return Err(Error::ConstraintViolation { norm_defect, radial });
    }
    Ok(())
}

/// Krylov chain `x^(p) = (-Rt)^(p-1) u` of the twisted operator at `state`.
pub fn algebraic_chain(
    model: &SpaceFormModel,
    params: &BergerParams,
    state: &BundleState,
    bundle: Bundle,
    p_max: usize,
) -> Result<DerivativeChain> {
    if bundle == Bundle::Tangent {
        return Err(Error::NotParallel);
    }
    check_p_max(p_max)?;
    model.check_all(&[&state.u, &state.xi, &state.w])?;
    check_unit_bundle(state)?;
    let neg = -model.twisted_matrix_unchecked(params, state.xi.as_slice(), state.w.as_slice());
    let mut vectors = Vec::with_capacity(p_max);
    let mut current = state.u.as_vector().clone();
    for _ in 0..p_max {
        let next = &neg * &current;
        vectors.push(FrameVector::from_dvector(current));
        current = next;
    }
    DerivativeChain::new(state.sigma, vectors)
}

/// Finite-difference weights for derivatives `0..=order` at `z` on `nodes`.
///
/// Returns `weights[k][j]`, the weight of node `j` for the `k`-th derivative.
pub fn fornberg_weights(z: f64, nodes: &[f64], order: usize) -> Vec<Vec<f64>> {
    let n = nodes.len();
    let mut c = vec![vec![0.0; n]; order + 1];
    if n == 0 {
        return c;
    }
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - z;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Half-width of the second-order central stencil for a derivative of `order`.
fn stencil_half_width(order: usize) -> usize {
    order.div_ceil(2).max(1)
}

/// Central-difference chain built from the sampled `u` components.
pub fn numeric_chain(traj: &Trajectory, center: usize, p_max: usize) -> Result<DerivativeChain> {
    check_p_max(p_max)?;
    let needed = stencil_half_width(p_max - 1);
    let len = traj.len();
    if center < needed || center + needed >= len {
        return Err(Error::InsufficientStencil { center, needed, len });
    }
    let h = traj.spacing;
    let state = &traj.samples[center].state;
    let mut vectors = Vec::with_capacity(p_max);
    vectors.push(state.u.clone());
    for order in 1..p_max {
        let s = stencil_half_width(order) as isize;
        let nodes: Vec<f64> = (-s..=s).map(|k| k as f64).collect();
        let weights = &fornberg_weights(0.0, &nodes, order)[order];
        let scale = h.powi(order as i32);
        let mut v = FrameVector::zeros(state.dim());
        for (k, wk) in (-s..=s).zip(weights) {
            let idx = (center as isize + k) as usize;
            v.add_scaled(wk / scale, &traj.samples[idx].state.u);
        }
        vectors.push(v);
    }
    DerivativeChain::new(state.sigma, vectors)
}

/// Frenet curvatures of a derivative chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curvatures {
    /// `k_1, ..., k_{r-1}` where `r` is the effective rank
    pub values: Vec<f64>,
    /// `k_1, ..., k_{p_max-1}` without truncation
    pub raw: Vec<f64>,
    /// number of chain vectors before the first rank collapse
    pub effective_rank: usize,
    /// `D_1, ..., D_{p_max}`
    pub gram_determinants: Vec<f64>,
    /// `D_{i+1} / (D_i |x^(i+1)|^2)` for `i = 1, ..., p_max - 1`
    pub rank_ratios: Vec<f64>,
}

impl Curvatures {
    /// `k_i`, 1-based; zero beyond the effective rank.
    pub fn get(&self, i: usize) -> f64 {
        if i == 0 {
            return 0.0;
        }
        self.values.get(i - 1).copied().unwrap_or(0.0)
    }
}

/// Residual norms `r_i` of modified Gram-Schmidt with one reorthogonalization
/// pass, so that `D_i = r_1^2 ... r_i^2`.
fn gram_schmidt_residuals(vectors: &[FrameVector]) -> Vec<f64> {
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(vectors.len());
    let mut residuals = Vec::with_capacity(vectors.len());
    for v in vectors {
        let mut r = v.as_vector().clone();
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&r);
                r.axpy(-proj, q, 1.0);
            }
        }
        let norm = r.norm();
        residuals.push(norm);
        if norm > 0.0 {
            basis.push(r / norm);
        }
    }
    residuals
}

pub fn generalized_curvatures(chain: &DerivativeChain, rank_tol: f64) -> Result<Curvatures> {
    let speed = chain.vectors[0].norm();
    if speed == 0.0 {
        return Err(Error::DegenerateProjection);
    }
    let r = gram_schmidt_residuals(&chain.vectors);
    let p = r.len();
    let mut gram_determinants = Vec::with_capacity(p);
    let mut d = 1.0;
    for ri in &r {
        d *= ri * ri;
        gram_determinants.push(d);
    }
    let mut raw = Vec::with_capacity(p - 1);
    let mut rank_ratios = Vec::with_capacity(p - 1);
    for i in 1..p {
        raw.push(if r[i - 1] > 0.0 { r[i] / (r[i - 1] * speed) } else { 0.0 });
        let norm_sq = chain.vectors[i].norm_squared();
        rank_ratios.push(if norm_sq > 0.0 { r[i] * r[i] / norm_sq } else { 0.0 });
    }
    let effective_rank = rank_ratios
        .iter()
        .position(|&ratio| ratio < rank_tol)
        .map_or(p, |i| i + 1);
    Ok(Curvatures {
        values: raw[..effective_rank - 1].to_vec(),
        raw,
        effective_rank,
        gram_determinants,
        rank_ratios,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ChainSource {
    Algebraic,
    Numeric,
}

/// Curvatures sampled along a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvatureProfile {
    pub bundle: Bundle,
    pub source: ChainSource,
    pub p_max: usize,
    pub sigmas: Vec<f64>,
    /// `curvatures[j][i-1] = k_i(sigma_j)`, zero beyond the effective rank
    pub curvatures: Vec<Vec<f64>>,
    /// untruncated `k_i(sigma_j)`
    pub raw_curvatures: Vec<Vec<f64>>,
    pub effective_rank: Vec<usize>,
    pub gram_determinants: Vec<Vec<f64>>,
    pub rank_ratios: Vec<Vec<f64>>,
    /// `|x^(p)|(sigma_j)`
    pub chain_norms: Vec<Vec<f64>>,
}

impl CurvatureProfile {
    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    /// `k_i` across samples, 1-based.
    pub fn column(&self, i: usize) -> Vec<f64> {
        self.curvatures.iter().map(|row| row[i - 1]).collect()
    }

    /// Largest `|k_i(sigma_j) - k_i(sigma_0)| / max(k_i(sigma_0), floor)` over `j`.
    pub fn relative_variation(&self, i: usize) -> f64 {
        let col = self.column(i);
        let Some(&k0) = col.first() else { return 0.0 };
        let scale = k0.max(CURVATURE_FLOOR);
        col.iter().map(|k| (k - k0).abs() / scale).fold(0.0, f64::max)
    }

    /// Largest spread of `|x^(p)|` across samples.
    pub fn chain_norm_spread(&self, p: usize) -> f64 {
        let col: Vec<f64> = self.chain_norms.iter().map(|row| row[p - 1]).collect();
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if col.is_empty() { 0.0 } else { hi - lo }
    }
}

/// Evaluates curvatures at every `stride`-th sample. Numeric chains skip the
/// samples whose stencil would leave the trajectory.
pub fn curvature_profile(
    traj: &Trajectory,
    p_max: usize,
    rank_tol: f64,
    stride: usize,
    source: ChainSource,
) -> Result<CurvatureProfile> {
    check_p_max(p_max)?;
    if source == ChainSource::Algebraic && traj.bundle == Bundle::Tangent {
        return Err(Error::NotParallel);
    }
    let stride = stride.max(1);
    let indices: Vec<usize> = match source {
        ChainSource::Algebraic => (0..traj.len()).step_by(stride).collect(),
        ChainSource::Numeric => {
            let s = stencil_half_width(p_max - 1);
            if traj.len() <= 2 * s {
                return Err(Error::TooFewSamples { needed: 2 * s + 1, actual: traj.len() });
            }
            (s..traj.len() - s).step_by(stride).collect()
        }
    };
    let mut profile = CurvatureProfile {
        bundle: traj.bundle,
        source,
        p_max,
        sigmas: Vec::with_capacity(indices.len()),
        curvatures: Vec::with_capacity(indices.len()),
        raw_curvatures: Vec::with_capacity(indices.len()),
        effective_rank: Vec::with_capacity(indices.len()),
        gram_determinants: Vec::with_capacity(indices.len()),
        rank_ratios: Vec::with_capacity(indices.len()),
        chain_norms: Vec::with_capacity(indices.len()),
    };
    for j in indices {
        let chain = match source {
            ChainSource::Algebraic => {
                algebraic_chain(&traj.model, &traj.params, &traj.samples[j].state, traj.bundle, p_max)?
            }
            ChainSource::Numeric => numeric_chain(traj, j, p_max)?,
        };
        let k = generalized_curvatures(&chain, rank_tol)?;
        let mut row = k.values.clone();
        row.resize(p_max - 1, 0.0);
        profile.sigmas.push(chain.at_sigma);
        profile.curvatures.push(row);
        profile.chain_norms.push(chain.norms());
        profile.raw_curvatures.push(k.raw);
        profile.effective_rank.push(k.effective_rank);
        profile.gram_determinants.push(k.gram_determinants);
        profile.rank_ratios.push(k.rank_ratios);
    }
    Ok(profile)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremVerdict {
    pub claim: String,
    pub passed: bool,
    pub residual: f64,
    pub tolerance: f64,
    pub samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_vanishing_index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl TheoremVerdict {
    pub fn new(claim: impl Into<String>, residual: f64, tolerance: f64, samples: usize) -> Self {
        Self {
            claim: claim.into(),
            passed: residual <= tolerance,
            residual,
            tolerance,
            samples,
            first_vanishing_index: None,
            detail: None,
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }
}

/// Every curvature defined at the first sample keeps its value along the profile.
pub fn constancy_verdict(profile: &CurvatureProfile, tol: f64) -> TheoremVerdict {
    let defined = profile.effective_rank.first().map_or(0, |r| r.saturating_sub(1));
    let mut worst = 0.0_f64;
    let mut worst_index = 0;
    for i in 1..=defined {
        let v = profile.relative_variation(i);
        if v > worst || v.is_nan() {
            worst = v;
            worst_index = i;
        }
    }
    let verdict = TheoremVerdict::new("curvature-constancy", worst, tol, profile.len());
    if worst_index > 0 {
        verdict.with_detail(format!("worst relative variation in k_{worst_index} over k_1..k_{defined}"))
    } else {
        verdict.with_detail(format!("no curvature above rank noise among k_1..k_{}", profile.p_max - 1))
    }
}

/// Index of the first curvature that vanishes at any sample, i.e. the
/// smallest effective rank, or `None` if the chain never degenerates.
pub fn first_vanishing_index(profile: &CurvatureProfile) -> Option<usize> {
    profile
        .effective_rank
        .iter()
        .min()
        .filter(|&&r| r < profile.p_max)
        .copied()
}

/// `k_6` at every sample, scaled by `max(k_1, 1)`, against `tol`.
///
/// Where the chain already degenerates before `x^(6)` the value is zero;
/// otherwise the untruncated `k_6` is audited.
pub fn vanishing_verdict(profile: &CurvatureProfile, model: &SpaceFormModel, tol: f64) -> Result<TheoremVerdict> {
    if model.n < 4 {
        return Err(Error::Inapplicable(format!("k_6 undefined for n = {}", model.n)));
    }
    if profile.p_max < VANISHING_INDEX + 1 {
        return Err(Error::invalid("p_max", "k_6 needs at least 7 chain vectors"));
    }
    let mut worst = 0.0_f64;
    let mut worst_sigma = profile.sigmas.first().copied().unwrap_or(0.0);
    for j in 0..profile.len() {
        let k6 = if profile.effective_rank[j] >= VANISHING_INDEX {
            profile.raw_curvatures[j][VANISHING_INDEX - 1]
        } else {
            0.0
        };
        let scaled = k6 / profile.raw_curvatures[j][0].max(1.0);
        if scaled > worst || scaled.is_nan() {
            worst = scaled;
            worst_sigma = profile.sigmas[j];
        }
    }
    let mut verdict = TheoremVerdict::new("k6-vanishing", worst, tol, profile.len())
        .with_detail(format!("largest scaled k_6 at sigma = {worst_sigma}"));
    verdict.first_vanishing_index = first_vanishing_index(profile);
    Ok(verdict)
}

/// Largest rank ratio `D_{i+1} / (D_i |x^(i+1)|^2)` across the profile.
pub fn rank_collapse_verdict(profile: &CurvatureProfile, i: usize, tol: f64) -> Result<TheoremVerdict> {
    if i == 0 || i >= profile.p_max {
        return Err(Error::invalid("p_max", format!("rank ratio D_{}/D_{i} needs {} chain vectors", i + 1, i + 1)));
    }
    let worst = profile.rank_ratios.iter().map(|r| r[i - 1]).fold(0.0, f64::max);
    Ok(TheoremVerdict::new(format!("gram-ratio-D{}-over-D{i}", i + 1), worst, tol, profile.len()))
}

/// Normalized least-squares residuals of matrix powers of `Rt` against the
/// three-term spans `{Rt^2, J Rt, E}` (even) and `{J Rt^2, Rt, J}` (odd).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpanResiduals {
    /// residual of `Rt^(2q)`, `q = 1..=q_max`
    pub even: Vec<f64>,
    /// residual of `Rt^(2q+1)`, `q = 1..=q_max`
    pub odd: Vec<f64>,
}

impl SpanResiduals {
    pub fn worst(&self) -> f64 {
        self.even.iter().chain(&self.odd).copied().fold(0.0, f64::max)
    }
}

fn fit_residual(target: &DMatrix<f64>, span: &[DMatrix<f64>]) -> f64 {
    let target_norm = target.norm();
    if target_norm == 0.0 {
        return 0.0;
    }
    let rows = target.len();
    let mut a = DMatrix::zeros(rows, span.len());
    for (j, m) in span.iter().enumerate() {
        let norm = m.norm();
        if norm > 0.0 {
            a.column_mut(j).copy_from(&DVector::from_column_slice(m.as_slice()));
            a.column_mut(j).unscale_mut(norm);
        }
    }
    let b = DVector::from_column_slice(target.as_slice()) / target_norm;
    let svd = a.clone().svd(true, true);
    let cutoff = 1e-12 * svd.singular_values.max();
    let coeffs = svd.solve(&b, cutoff.max(f64::MIN_POSITIVE)).expect("U and V requested");
    (a * coeffs - b).norm()
}

pub fn span_residual(
    model: &SpaceFormModel,
    params: &BergerParams,
    xi: &FrameVector,
    w: &FrameVector,
    q_max: usize,
) -> Result<SpanResiduals> {
    model.check_all(&[xi, w])?;
    if q_max < 2 {
        return Err(Error::invalid("q_max", "must be >= 2"));
    }
    let norm_defect = xi.norm() - 1.0;
    let radial = xi.dot(w);
    if norm_defect.abs() > UNIT_BUNDLE_RHS_TOLERANCE || radial.abs() > UNIT_BUNDLE_RHS_TOLERANCE {
        return Err(Error::ConstraintViolation { norm_defect, radial });
    }
    let r = model.twisted_matrix_unchecked(params, xi.as_slice(), w.as_slice());
    let j = model.j_matrix();
    let r2 = &r * &r;
    let even_span = [r2.clone(), &j * &r, DMatrix::identity(r.nrows(), r.ncols())];
    let odd_span = [&j * &r2, r.clone(), j];
    let mut even = Vec::with_capacity(q_max);
    let mut odd = Vec::with_capacity(q_max);
    let mut power = r2.clone();
    for _ in 0..q_max {
        even.push(fit_residual(&power, &even_span));
        power = &power * &r;
        odd.push(fit_residual(&power, &odd_span));
        power = &power * &r;
    }
    Ok(SpanResiduals { even, odd })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{integrate, prepare_initial, FlowConfig};
    use approx::assert_abs_diff_eq;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(delta: f64) -> BergerParams {
        BergerParams::new(delta).unwrap()
    }

    fn unit_state(n: usize, delta: f64, seed: u64) -> BundleState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 2 * n;
        let xi = FrameVector::random_unit(dim, &mut rng);
        let w = FrameVector::random_gaussian(dim, &mut rng) * (0.15 / (n as f64).sqrt());
        let u_dir = FrameVector::random_unit(dim, &mut rng);
        prepare_initial(&xi, &w, &u_dir, &params(delta), Bundle::UnitTangent)
            .unwrap()
            .state
    }

    fn chain_of(vectors: Vec<Vec<f64>>) -> DerivativeChain {
        DerivativeChain::new(0.0, vectors.into_iter().map(|v| FrameVector::new(v).unwrap()).collect()).unwrap()
    }

    #[test]
    fn fornberg_reproduces_textbook_stencils() {
        let w = fornberg_weights(0.0, &[-1.0, 0.0, 1.0], 2);
        assert_eq!(w[1], vec![-0.5, 0.0, 0.5]);
        assert_eq!(w[2], vec![1.0, -2.0, 1.0]);
        let w = fornberg_weights(0.0, &[-2.0, -1.0, 0.0, 1.0, 2.0], 4);
        for (got, want) in w[3].iter().zip([-0.5, 1.0, 0.0, -1.0, 0.5]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-14);
        }
        for (got, want) in w[4].iter().zip([1.0, -4.0, 6.0, -4.0, 1.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-13);
        }
    }

    #[test]
    fn planar_circle_curvature() {
        let (v, a) = (2.0, 3.0);
        let k = generalized_curvatures(&chain_of(vec![vec![v, 0.0], vec![0.0, a]]), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(k.values, vec![a / (v * v)]);
        assert_eq!(k.effective_rank, 2);
        assert_eq!(k.gram_determinants, vec![v * v, v * v * a * a]);
    }

    #[test]
    fn straight_line_has_no_curvatures() {
        let k = generalized_curvatures(&chain_of(vec![vec![1.0, 2.0], vec![0.0, 0.0], vec![0.0, 0.0]]), DEFAULT_RANK_TOL)
            .unwrap();
        assert!(k.values.is_empty());
        assert_eq!(k.effective_rank, 1);
        assert_eq!(k.get(1), 0.0);
    }

    #[test]
    fn zero_velocity_is_degenerate() {
        let err = generalized_curvatures(&chain_of(vec![vec![0.0, 0.0], vec![1.0, 0.0]]), DEFAULT_RANK_TOL).unwrap_err();
        assert!(matches!(err, Error::DegenerateProjection));
    }

    #[test]
    fn helix_curvature_and_torsion() {
        // x(t) = (r cos t, r sin t, b t, 0): k1 = r/(r^2+b^2), k2 = b/(r^2+b^2)
        let (r, b) = (2.0, 1.0);
        let chain = chain_of(vec![
            vec![0.0, r, b, 0.0],
            vec![-r, 0.0, 0.0, 0.0],
            vec![0.0, -r, 0.0, 0.0],
            vec![r, 0.0, 0.0, 0.0],
        ]);
        let k = generalized_curvatures(&chain, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(k.effective_rank, 3);
        assert_abs_diff_eq!(k.get(1), r / (r * r + b * b), epsilon = 1e-15);
        assert_abs_diff_eq!(k.get(2), b / (r * r + b * b), epsilon = 1e-15);
        assert_eq!(k.get(3), 0.0);
    }

    #[test]
    fn flat_sasaki_chain_vanishes_beyond_velocity() {
        let state = unit_state(2, 0.0, 1);
        let chain = algebraic_chain(&SpaceFormModel::flat(2), &BergerParams::sasaki(), &state, Bundle::UnitTangent, 5).unwrap();
        assert_eq!(chain.derivative(1), &state.u);
        for p in 2..=5 {
            assert_eq!(chain.derivative(p).max_abs(), 0.0);
        }
    }

    #[test]
    fn algebraic_chain_matches_repeated_application() {
        let model = SpaceFormModel::projective(2);
        let p = params(0.8);
        let state = unit_state(2, 0.8, 2);
        let chain = algebraic_chain(&model, &p, &state, Bundle::UnitTangent, 6).unwrap();
        let mut v = state.u.clone();
        for k in 1..=6 {
            let diff = chain.derivative(k) - &v;
            assert!(diff.max_abs() <= 1e-12 * (1.0 + v.max_abs()));
            v = -model.twisted(&p, &state.xi, &state.w, &v).unwrap();
        }
        // skewness: consecutive chain vectors are orthogonal
        for k in 1..6 {
            assert!(chain.derivative(k).dot(chain.derivative(k + 1)).abs() <= 1e-12);
        }
    }

    #[test]
    fn algebraic_chain_rejects_tangent_bundle_and_bad_states() {
        let model = SpaceFormModel::projective(2);
        let state = unit_state(2, 0.5, 3);
        assert!(matches!(
            algebraic_chain(&model, &params(0.5), &state, Bundle::Tangent, 4),
            Err(Error::NotParallel)
        ));
        assert!(algebraic_chain(&model, &params(0.5), &state, Bundle::UnitTangent, 1).is_err());
        let off = BundleState { xi: &state.xi * 0.5, ..state };
        assert!(matches!(
            algebraic_chain(&model, &params(0.5), &off, Bundle::UnitTangent, 4),
            Err(Error::ConstraintViolation { .. })
        ));
    }

    #[test]
    fn numeric_chain_tracks_algebraic_chain() {
        let model = SpaceFormModel::projective(2);
        let p = params(0.8);
        let state = unit_state(2, 0.8, 4);
        let traj = integrate(&FlowConfig::new(Bundle::UnitTangent, model, p, 1e-3, 0.1), &state).unwrap();
        let center = 50;
        let numeric = numeric_chain(&traj, center, 4).unwrap();
        let exact = algebraic_chain(&model, &p, &traj.samples[center].state, Bundle::UnitTangent, 4).unwrap();
        for k in 1..=4 {
            let err = (numeric.derivative(k) - exact.derivative(k)).norm();
            assert!(err <= 1e-4 * exact.derivative(k).norm(), "p = {k}: {err}");
        }
        assert!(matches!(numeric_chain(&traj, 1, 4), Err(Error::InsufficientStencil { .. })));
        assert!(matches!(numeric_chain(&traj, 100, 4), Err(Error::InsufficientStencil { .. })));
    }

    #[test]
    fn unit_bundle_profile_is_constant() {
        let model = SpaceFormModel::projective(4);
        let p = params(0.7);
        let state = unit_state(4, 0.7, 5);
        let traj = integrate(&FlowConfig::new(Bundle::UnitTangent, model, p, 1e-3, 5.0).with_stride(100), &state).unwrap();
        let profile = curvature_profile(&traj, 8, DEFAULT_RANK_TOL, 1, ChainSource::Algebraic).unwrap();
        assert_eq!(profile.len(), 51);
        assert!(profile.effective_rank.iter().all(|&r| r == 6), "{:?}", profile.effective_rank);
        let verdict = constancy_verdict(&profile, 1e-6);
        assert!(verdict.passed, "{verdict:?}");
        let vanishing = vanishing_verdict(&profile, &model, 1e-7).unwrap();
        assert!(vanishing.passed, "{vanishing:?}");
        assert_eq!(vanishing.first_vanishing_index, Some(6));
        assert!(rank_collapse_verdict(&profile, 7, 1e-12).unwrap().passed);
        for p in 1..=6 {
            assert!(profile.chain_norm_spread(p) <= 1e-7);
        }
    }

    #[test]
    fn flat_profile_vanishes_from_the_first_index() {
        let model = SpaceFormModel::flat(4);
        let state = unit_state(4, 0.5, 6);
        let traj = integrate(&FlowConfig::new(Bundle::UnitTangent, model, params(0.5), 1e-2, 1.0), &state).unwrap();
        let profile = curvature_profile(&traj, 8, DEFAULT_RANK_TOL, 10, ChainSource::Algebraic).unwrap();
        assert!(profile.curvatures.iter().flatten().all(|&k| k == 0.0));
        assert!(constancy_verdict(&profile, 1e-6).passed);
        let vanishing = vanishing_verdict(&profile, &model, 1e-7).unwrap();
        assert!(vanishing.passed);
        assert_eq!(vanishing.first_vanishing_index, Some(1));
    }

    #[test]
    fn profile_rejects_vertical_and_tangent_algebraic() {
        let model = SpaceFormModel::projective(2);
        let xi = FrameVector::basis(4, 0);
        let vertical = prepare_initial(&xi, &FrameVector::basis(4, 2), &FrameVector::basis(4, 3), &params(0.5), Bundle::UnitTangent)
            .unwrap();
        assert!(vertical.vertical);
        let traj = integrate(&FlowConfig::new(Bundle::UnitTangent, model, params(0.5), 1e-2, 0.5), &vertical.state).unwrap();
        assert!(matches!(
            curvature_profile(&traj, 4, DEFAULT_RANK_TOL, 1, ChainSource::Algebraic),
            Err(Error::DegenerateProjection)
        ));
        let state = unit_state(2, 0.5, 7);
        let traj = integrate(&FlowConfig::new(Bundle::Tangent, model, params(0.5), 1e-2, 0.5), &state).unwrap();
        assert!(matches!(
            curvature_profile(&traj, 4, DEFAULT_RANK_TOL, 1, ChainSource::Algebraic),
            Err(Error::NotParallel)
        ));
        assert!(curvature_profile(&traj, 4, DEFAULT_RANK_TOL, 1, ChainSource::Numeric).is_ok());
    }

    #[test]
    fn vanishing_needs_four_complex_dimensions() {
        let model = SpaceFormModel::projective(2);
        let state = unit_state(2, 0.5, 8);
        let traj = integrate(&FlowConfig::new(Bundle::UnitTangent, model, params(0.5), 1e-2, 0.5), &state).unwrap();
        let profile = curvature_profile(&traj, 8, DEFAULT_RANK_TOL, 10, ChainSource::Algebraic).unwrap();
        assert!(matches!(vanishing_verdict(&profile, &model, 1e-7), Err(Error::Inapplicable(_))));
    }

    #[test]
    fn span_residuals_are_tiny() {
        let model = SpaceFormModel::projective(4);
        let state = unit_state(4, 0.6, 9);
        let res = span_residual(&model, &params(0.6), &state.xi, &state.w, 5).unwrap();
        assert_eq!(res.even.len(), 5);
        assert!(res.even[0] <= 1e-14);
        assert!(res.worst() <= 1e-10, "{res:?}");
    }

    #[test]
    fn span_residuals_flat_and_errors() {
        let state = unit_state(2, 0.6, 10);
        let res = span_residual(&SpaceFormModel::flat(2), &BergerParams::sasaki(), &state.xi, &state.w, 3).unwrap();
        assert_eq!(res.worst(), 0.0);
        let model = SpaceFormModel::projective(2);
        assert!(span_residual(&model, &params(0.6), &state.xi, &state.w, 1).is_err());
        assert!(span_residual(&model, &params(0.6), &(&state.xi * 2.0), &state.w, 3).is_err());
    }

    #[test]
    fn a_generic_matrix_power_leaves_the_span() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let span = [DMatrix::identity(2, 2)];
        assert!(fit_residual(&a, &span) > 0.1);
        assert!(fit_residual(&(DMatrix::identity(2, 2) * 3.0), &span) < 1e-15);
    }
}

//! Pointwise linear algebra of a complex space form.
//!
//! Tangent vectors are stored by their components in an orthonormal frame
//! adapted to the complex structure: `J` maps `e[2k]` to `e[2k + 1]` and
//! `e[2k + 1]` to `-e[2k]`. Because the base is Kähler and locally symmetric,
//! such a frame can be chosen parallel along any curve, so every operator in
//! this module has constant components along curves.
//!
//! The curvature tensor of a space form with holomorphic sectional curvature
//! `m` is
//!
//! ```text
//! R(X, Y)Z = m/4 ( <Y,Z>X - <X,Z>Y + <JY,Z>JX - <JX,Z>JY + 2<X,JY>JZ )
//! ```
//!
//! It is always evaluated from this closed form; no rank-4 array is stored.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A base tangent vector in a parallel, orthonormal, `J`-adapted frame.
#[derive(Clone, PartialEq)]
pub struct FrameVector(DVector<f64>);

impl FrameVector {
    /// Builds a frame vector, rejecting odd lengths and non-finite entries.
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() || !components.len().is_multiple_of(2) {
            return Err(Error::OddDimension(components.len()));
        }
        if components.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("frame vector"));
        }
        Ok(Self(DVector::from_vec(components)))
    }

    pub(crate) fn from_slice(components: &[f64]) -> Self {
        Self(DVector::from_column_slice(components))
    }

    pub(crate) fn from_dvector(v: DVector<f64>) -> Self {
        Self(v)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DVector::zeros(dim))
    }

    /// The `i`-th frame vector (zero based).
    pub fn basis(dim: usize, i: usize) -> Self {
        let mut v = DVector::zeros(dim);
        v[i] = 1.0;
        Self(v)
    }

    /// Standard Gaussian components.
    pub fn random_gaussian<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        Self(DVector::from_fn(dim, |_, _| rng.sample(StandardNormal)))
    }

    /// Uniformly distributed on the unit sphere.
    pub fn random_unit<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        loop {
            let v = Self::random_gaussian(dim, rng);
            let norm = v.norm();
            if norm > 1e-8 {
                return v * (1.0 / norm);
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0.data.into()
    }

    /// Euclidean dot product in the orthonormal frame.
    ///
    /// Panics if the dimensions differ; use [`inner`] for a checked version.
    pub fn dot(&self, other: &FrameVector) -> f64 {
        dot(self.as_slice(), other.as_slice())
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn norm_squared(&self) -> f64 {
        self.0.norm_squared()
    }

    /// `J` applied to this vector.
    pub fn j(&self) -> FrameVector {
        let mut out = DVector::zeros(self.dim());
        j_into(self.as_slice(), out.as_mut_slice());
        Self(out)
    }

    /// Largest absolute component.
    pub fn max_abs(&self) -> f64 {
        self.0.amax()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    /// `self += alpha * x`
    pub fn add_scaled(&mut self, alpha: f64, x: &FrameVector) {
        self.0.axpy(alpha, &x.0, 1.0);
    }
}

impl fmt::Debug for FrameVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

impl Add for &FrameVector {
    type Output = FrameVector;
    fn add(self, rhs: &FrameVector) -> FrameVector {
        FrameVector(&self.0 + &rhs.0)
    }
}

impl Add for FrameVector {
    type Output = FrameVector;
    fn add(self, rhs: FrameVector) -> FrameVector {
        FrameVector(self.0 + rhs.0)
    }
}

impl AddAssign<&FrameVector> for FrameVector {
    fn add_assign(&mut self, rhs: &FrameVector) {
        self.0 += &rhs.0;
    }
}

impl Sub for &FrameVector {
    type Output = FrameVector;
    fn sub(self, rhs: &FrameVector) -> FrameVector {
        FrameVector(&self.0 - &rhs.0)
    }
}

impl Sub for FrameVector {
    type Output = FrameVector;
    fn sub(self, rhs: FrameVector) -> FrameVector {
        FrameVector(self.0 - rhs.0)
    }
}

impl Neg for FrameVector {
    type Output = FrameVector;
    fn neg(self) -> FrameVector {
        FrameVector(-self.0)
    }
}

impl Neg for &FrameVector {
    type Output = FrameVector;
    fn neg(self) -> FrameVector {
        FrameVector(-&self.0)
    }
}

impl Mul<f64> for FrameVector {
    type Output = FrameVector;
    fn mul(self, rhs: f64) -> FrameVector {
        FrameVector(self.0 * rhs)
    }
}

impl Mul<f64> for &FrameVector {
    type Output = FrameVector;
    fn mul(self, rhs: f64) -> FrameVector {
        FrameVector(&self.0 * rhs)
    }
}

impl Mul<&FrameVector> for f64 {
    type Output = FrameVector;
    fn mul(self, rhs: &FrameVector) -> FrameVector {
        FrameVector(&rhs.0 * self)
    }
}

impl Mul<FrameVector> for f64 {
    type Output = FrameVector;
    fn mul(self, rhs: FrameVector) -> FrameVector {
        FrameVector(rhs.0 * self)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "frame vector dimension mismatch");
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn j_into(x: &[f64], out: &mut [f64]) {
    for (src, dst) in x.chunks_exact(2).zip(out.chunks_exact_mut(2)) {
        dst[0] = -src[1];
        dst[1] = src[0];
    }
}

/// `<JA, B>`, the Kähler form up to sign.
pub(crate) fn j_pairing(a: &[f64], b: &[f64]) -> f64 {
    a.chunks_exact(2)
        .zip(b.chunks_exact(2))
        .map(|(a, b)| -a[1] * b[0] + a[0] * b[1])
        .sum()
}

/// Checked `J` application.
pub fn apply_j(model: &SpaceFormModel, x: &FrameVector) -> Result<FrameVector> {
    model.check(x)?;
    Ok(x.j())
}

/// Checked inner product.
pub fn inner(x: &FrameVector, y: &FrameVector) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            actual: y.dim(),
        });
    }
    Ok(x.dot(y))
}

/// Deformation magnitude of the fiber metric along the Hopf direction `J xi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BergerParams {
    pub delta: f64,
}

impl BergerParams {
    pub fn new(delta: f64) -> Result<Self> {
        if !delta.is_finite() || delta < 0.0 {
            return Err(Error::invalid("delta", format!("must be finite and >= 0, got {delta}")));
        }
        Ok(Self { delta })
    }

    /// The undeformed Sasaki metric.
    pub fn sasaki() -> Self {
        Self { delta: 0.0 }
    }

    pub fn delta_sq(&self) -> f64 {
        self.delta * self.delta
    }
}

/// Complex space form of complex dimension `n` and holomorphic sectional
/// curvature `m` (CP^n for `m > 0`, flat for `m = 0`, CH^n for `m < 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceFormModel {
    pub n: usize,
    pub m: f64,
}

impl SpaceFormModel {
    pub fn new(n: usize, m: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n", "complex dimension must be >= 1"));
        }
        if !m.is_finite() {
            return Err(Error::invalid("m", "holomorphic sectional curvature must be finite"));
        }
        Ok(Self { n, m })
    }

    /// CP^n normalized so that `R(xi, J xi)` acts as `-2J` off the complex line of `xi`.
    pub fn projective(n: usize) -> Self {
        Self { n, m: 4.0 }
    }

    pub fn flat(n: usize) -> Self {
        Self { n, m: 0.0 }
    }

    /// Real dimension `2n`.
    pub fn dim(&self) -> usize {
        2 * self.n
    }

    pub(crate) fn check(&self, x: &FrameVector) -> Result<()> {
        if x.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.dim(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_all(&self, xs: &[&FrameVector]) -> Result<()> {
        xs.iter().try_for_each(|x| self.check(x))
    }

    /// `out = R(x, y) z` on raw component slices.
    pub(crate) fn riemann_into(&self, x: &[f64], y: &[f64], z: &[f64], out: &mut [f64]) {
        let s = 0.25 * self.m;
        let yz = dot(y, z);
        let xz = dot(x, z);
        let jy_z = j_pairing(y, z);
        let jx_z = j_pairing(x, z);
        // 2<X, JY> = 2<JY, X>
        let twice_x_jy = 2.0 * j_pairing(y, x);
        for k in 0..x.len() / 2 {
            let (a, b) = (2 * k, 2 * k + 1);
            // (JV)[a] = -V[b], (JV)[b] = V[a]
            out[a] = s
                * (yz * x[a] - xz * y[a] - jy_z * x[b] + jx_z * y[b] - twice_x_jy * z[b]);
            out[b] = s
                * (yz * x[b] - xz * y[b] + jy_z * x[a] - jx_z * y[a] + twice_x_jy * z[a]);
        }
    }

    pub(crate) fn riemann_unchecked(
        &self,
        x: &FrameVector,
        y: &FrameVector,
        z: &FrameVector,
    ) -> FrameVector {
        let mut out = FrameVector::zeros(x.dim());
        self.riemann_into(x.as_slice(), y.as_slice(), z.as_slice(), out.0.as_mut_slice());
        out
    }

    /// `R(x, y) z`.
    pub fn riemann(&self, x: &FrameVector, y: &FrameVector, z: &FrameVector) -> Result<FrameVector> {
        self.check_all(&[x, y, z])?;
        Ok(self.riemann_unchecked(x, y, z))
    }

    /// Second slot of the twisted operator: `xidot + delta^2 <xidot, J xi> J xi`.
    ///
    /// `R` is linear in its second argument, so
    /// `R(xi, xidot) + delta^2 mu R(xi, J xi) = R(xi, twisted_direction)`.
    pub(crate) fn twisted_direction_into(
        params: &BergerParams,
        xi: &[f64],
        xidot: &[f64],
        out: &mut [f64],
    ) {
        j_into(xi, out);
        let mu = dot(xidot, out);
        let coeff = params.delta_sq() * mu;
        for (o, d) in out.iter_mut().zip(xidot) {
            *o = d + coeff * *o;
        }
    }

    /// The twisted curvature operator `R(xi, xidot) + delta^2 <xidot, J xi> R(xi, J xi)` applied to `x`.
    pub fn twisted(
        &self,
        params: &BergerParams,
        xi: &FrameVector,
        xidot: &FrameVector,
        x: &FrameVector,
    ) -> Result<FrameVector> {
        self.check_all(&[xi, xidot, x])?;
        Ok(self.twisted_unchecked(params, xi, xidot, x))
    }

    pub(crate) fn twisted_unchecked(
        &self,
        params: &BergerParams,
        xi: &FrameVector,
        xidot: &FrameVector,
        x: &FrameVector,
    ) -> FrameVector {
        let mut dir = vec![0.0; xi.dim()];
        Self::twisted_direction_into(params, xi.as_slice(), xidot.as_slice(), &mut dir);
        let mut out = FrameVector::zeros(xi.dim());
        self.riemann_into(xi.as_slice(), &dir, x.as_slice(), out.0.as_mut_slice());
        out
    }

    /// Matrix of the twisted operator; column `j` is its value on `e_j`.
    pub fn twisted_matrix(
        &self,
        params: &BergerParams,
        xi: &FrameVector,
        xidot: &FrameVector,
    ) -> Result<DMatrix<f64>> {
        self.check_all(&[xi, xidot])?;
        Ok(self.twisted_matrix_unchecked(params, xi.as_slice(), xidot.as_slice()))
    }

    pub(crate) fn twisted_matrix_unchecked(
        &self,
        params: &BergerParams,
        xi: &[f64],
        xidot: &[f64],
    ) -> DMatrix<f64> {
        let dim = self.dim();
        let mut dir = vec![0.0; dim];
        Self::twisted_direction_into(params, xi, xidot, &mut dir);
        let mut mat = DMatrix::zeros(dim, dim);
        let mut e = vec![0.0; dim];
        let mut col = vec![0.0; dim];
        for j in 0..dim {
            e[j] = 1.0;
            self.riemann_into(xi, &dir, &e, &mut col);
            mat.column_mut(j).copy_from_slice(&col);
            e[j] = 0.0;
        }
        mat
    }

    /// Matrix of the curvature operator `R(x, y)`.
    pub fn riemann_matrix(&self, x: &FrameVector, y: &FrameVector) -> Result<DMatrix<f64>> {
        self.check_all(&[x, y])?;
        let dim = self.dim();
        let mut mat = DMatrix::zeros(dim, dim);
        let mut col = vec![0.0; dim];
        for j in 0..dim {
            let e = FrameVector::basis(dim, j);
            self.riemann_into(x.as_slice(), y.as_slice(), e.as_slice(), &mut col);
            mat.column_mut(j).copy_from_slice(&col);
        }
        Ok(mat)
    }

    /// Matrix of the complex structure.
    pub fn j_matrix(&self) -> DMatrix<f64> {
        let dim = self.dim();
        let mut mat = DMatrix::zeros(dim, dim);
        for k in 0..self.n {
            mat[(2 * k + 1, 2 * k)] = 1.0;
            mat[(2 * k, 2 * k + 1)] = -1.0;
        }
        mat
    }

    /// Worst absolute defect of the algebraic curvature identities on random unit inputs:
    /// skewness in each pair, pair symmetry, first Bianchi, `R(JX, JY) = R(X, Y)`
    /// and `R(X, Y) J = J R(X, Y)`.
    pub fn symmetry_residuals(&self, sample_count: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = self.dim();
        let mut worst: f64 = 0.0;
        for _ in 0..sample_count.max(1) {
            let x = FrameVector::random_unit(dim, &mut rng);
            let y = FrameVector::random_unit(dim, &mut rng);
            let z = FrameVector::random_unit(dim, &mut rng);
            let w = FrameVector::random_unit(dim, &mut rng);
            let r = |a: &FrameVector, b: &FrameVector, c: &FrameVector| self.riemann_unchecked(a, b, c);

            let rxyzw = r(&x, &y, &z).dot(&w);
            let skew_first = rxyzw + r(&y, &x, &z).dot(&w);
            let skew_last = rxyzw + r(&x, &y, &w).dot(&z);
            let pair = rxyzw - r(&z, &w, &x).dot(&y);
            let bianchi = (r(&x, &y, &z) + r(&y, &z, &x) + r(&z, &x, &y)).max_abs();
            let holo = (r(&x.j(), &y.j(), &z) - r(&x, &y, &z)).max_abs();
            let commute = (r(&x, &y, &z.j()) - r(&x, &y, &z).j()).max_abs();

            for defect in [skew_first, skew_last, pair, bianchi, holo, commute] {
                worst = worst.max(defect.abs());
            }
        }
        worst
    }
}

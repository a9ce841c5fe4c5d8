//! The Berger-deformed Sasaki metric on `TM` and its Levi-Civita connection.
//!
//! Tangent vectors to `TM` at `(q, xi)` are split into horizontal and vertical
//! parts, both identified with `T_q M`. The metric is
//!
//! ```text
//! <<A, B>> = <A.h, B.h> + <A.v, B.v> + delta^2 <A.v, J xi> <B.v, J xi>
//! ```
//!
//! Lifted vector fields are evaluated pointwise from a [`FieldJet`]: the values
//! of three base fields `X, Y, Z` at `q` together with all nine covariant
//! derivatives `nabla_P Q`. Every identity checked here (Koszul formula,
//! torsion-freeness, metric compatibility) is multilinear in that data, so
//! random jets exercise it completely.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space_form::{BergerParams, FrameVector, SpaceFormModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LiftKind {
    Horizontal,
    Vertical,
}

impl LiftKind {
    pub const ALL: [LiftKind; 2] = [LiftKind::Horizontal, LiftKind::Vertical];
}

/// One of the three abstract base fields carried by a [`FieldJet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    X,
    Y,
    Z,
}

impl Field {
    fn index(self) -> usize {
        match self {
            Field::X => 0,
            Field::Y => 1,
            Field::Z => 2,
        }
    }
}

/// Horizontal or vertical lift of a base field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Lift {
    pub kind: LiftKind,
    pub field: Field,
}

impl Lift {
    pub fn new(kind: LiftKind, field: Field) -> Self {
        Self { kind, field }
    }

    pub fn h(field: Field) -> Self {
        Self::new(LiftKind::Horizontal, field)
    }

    pub fn v(field: Field) -> Self {
        Self::new(LiftKind::Vertical, field)
    }
}

/// A tangent vector to `TM`: horizontal projection `h` and vertical projection `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedVector {
    pub h: FrameVector,
    pub v: FrameVector,
}

impl LiftedVector {
    pub fn new(h: FrameVector, v: FrameVector) -> Result<Self> {
        if h.dim() != v.dim() {
            return Err(Error::DimensionMismatch {
                expected: h.dim(),
                actual: v.dim(),
            });
        }
        Ok(Self { h, v })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            h: FrameVector::zeros(dim),
            v: FrameVector::zeros(dim),
        }
    }

    pub fn horizontal(x: FrameVector) -> Self {
        let v = FrameVector::zeros(x.dim());
        Self { h: x, v }
    }

    pub fn vertical(x: FrameVector) -> Self {
        let h = FrameVector::zeros(x.dim());
        Self { h, v: x }
    }

    pub fn lift(kind: LiftKind, x: FrameVector) -> Self {
        match kind {
            LiftKind::Horizontal => Self::horizontal(x),
            LiftKind::Vertical => Self::vertical(x),
        }
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }

    pub fn max_abs(&self) -> f64 {
        self.h.max_abs().max(self.v.max_abs())
    }

    pub fn sub(&self, other: &LiftedVector) -> LiftedVector {
        LiftedVector {
            h: &self.h - &other.h,
            v: &self.v - &other.v,
        }
    }

    pub fn add(&self, other: &LiftedVector) -> LiftedVector {
        LiftedVector {
            h: &self.h + &other.h,
            v: &self.v + &other.v,
        }
    }
}

/// A point `(q, xi)` of `TM`; the base point is implicit by homogeneity.
#[derive(Debug, Clone, PartialEq)]
pub struct FiberPoint {
    pub xi: FrameVector,
}

impl FiberPoint {
    pub fn new(xi: FrameVector) -> Self {
        Self { xi }
    }
}

/// First-order jet of three base vector fields at a point.
#[derive(Debug, Clone)]
pub struct FieldJet {
    values: [FrameVector; 3],
    /// `derivatives[a][b] = nabla_a b`
    derivatives: [[FrameVector; 3]; 3],
}

impl FieldJet {
    pub fn new(values: [FrameVector; 3], derivatives: [[FrameVector; 3]; 3]) -> Result<Self> {
        let dim = values[0].dim();
        for v in values.iter().chain(derivatives.iter().flatten()) {
            if v.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: v.dim(),
                });
            }
        }
        Ok(Self { values, derivatives })
    }

    /// Gaussian values and derivatives.
    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let values = std::array::from_fn(|_| FrameVector::random_gaussian(dim, rng));
        let derivatives =
            std::array::from_fn(|_| std::array::from_fn(|_| FrameVector::random_gaussian(dim, rng)));
        Self { values, derivatives }
    }

    pub fn dim(&self) -> usize {
        self.values[0].dim()
    }

    pub fn value(&self, field: Field) -> &FrameVector {
        &self.values[field.index()]
    }

    /// `nabla_along of`
    pub fn derivative(&self, along: Field, of: Field) -> &FrameVector {
        &self.derivatives[along.index()][of.index()]
    }

    pub fn set_derivative(&mut self, along: Field, of: Field, value: FrameVector) {
        self.derivatives[along.index()][of.index()] = value;
    }

    /// `[P, Q] = nabla_P Q - nabla_Q P` on the base.
    fn base_bracket(&self, p: Field, q: Field) -> FrameVector {
        self.derivative(p, q) - self.derivative(q, p)
    }
}

/// The four differentiation rules for the lifted metric along lifts of `X`
/// applied to lifts of `Y` and `Z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeRule {
    /// `X^h <<Y^h, Z^h>>`
    HhByH,
    /// `X^h <<Y^v, Z^v>>`
    VvByH,
    /// `X^v <<Y^h, Z^h>>`
    HhByV,
    /// `X^v <<Y^v, Z^v>>`
    VvByV,
}

impl DerivativeRule {
    fn lifts(self) -> (Lift, Lift, Lift) {
        use Field::*;
        match self {
            DerivativeRule::HhByH => (Lift::h(X), Lift::h(Y), Lift::h(Z)),
            DerivativeRule::VvByH => (Lift::h(X), Lift::v(Y), Lift::v(Z)),
            DerivativeRule::HhByV => (Lift::v(X), Lift::h(Y), Lift::h(Z)),
            DerivativeRule::VvByV => (Lift::v(X), Lift::v(Y), Lift::v(Z)),
        }
    }
}

/// Which vertical-vertical connection formula to use. The flipped variant
/// exists so that the verifiers can be shown to reject a wrong connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ConnectionVariant {
    #[default]
    Exact,
    /// Sign of the `delta^2 / (1 + delta^2 |xi|^2)` correction reversed.
    FlippedFiberCorrection,
}

/// The Berger-deformed Sasaki metric over a complex space form.
#[derive(Debug, Clone, Copy)]
pub struct BergerSasaki {
    pub model: SpaceFormModel,
    pub params: BergerParams,
    pub variant: ConnectionVariant,
}

impl BergerSasaki {
    pub fn new(model: SpaceFormModel, params: BergerParams) -> Self {
        Self {
            model,
            params,
            variant: ConnectionVariant::Exact,
        }
    }

    pub fn with_variant(mut self, variant: ConnectionVariant) -> Self {
        self.variant = variant;
        self
    }

    fn check(&self, jet: &FieldJet, at: &FiberPoint) -> Result<()> {
        self.model.check(&at.xi)?;
        if jet.dim() != self.model.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.model.dim(),
                actual: jet.dim(),
            });
        }
        Ok(())
    }

    /// Vertical part of the metric: `<a, b> + delta^2 <a, J xi> <b, J xi>`.
    fn fiber_inner(&self, xi: &FrameVector, a: &FrameVector, b: &FrameVector) -> f64 {
        let jxi = xi.j();
        a.dot(b) + self.params.delta_sq() * a.dot(&jxi) * b.dot(&jxi)
    }

    fn inner_unchecked(&self, at: &FiberPoint, a: &LiftedVector, b: &LiftedVector) -> f64 {
        a.h.dot(&b.h) + self.fiber_inner(&at.xi, &a.v, &b.v)
    }

    /// The lifted metric.
    pub fn lifted_inner(&self, at: &FiberPoint, a: &LiftedVector, b: &LiftedVector) -> Result<f64> {
        self.model.check_all(&[&at.xi, &a.h, &a.v, &b.h, &b.v])?;
        Ok(self.inner_unchecked(at, a, b))
    }

    fn lift_value(&self, lift: Lift, jet: &FieldJet) -> LiftedVector {
        LiftedVector::lift(lift.kind, jet.value(lift.field).clone())
    }

    fn bracket_unchecked(&self, a: Lift, b: Lift, jet: &FieldJet, at: &FiberPoint) -> LiftedVector {
        use LiftKind::*;
        match (a.kind, b.kind) {
            (Horizontal, Horizontal) => {
                let r = self.model.riemann_unchecked(
                    jet.value(a.field),
                    jet.value(b.field),
                    &at.xi,
                );
                LiftedVector {
                    h: jet.base_bracket(a.field, b.field),
                    v: -r,
                }
            }
            (Horizontal, Vertical) => {
                LiftedVector::vertical(jet.derivative(a.field, b.field).clone())
            }
            (Vertical, Horizontal) => {
                LiftedVector::vertical(-jet.derivative(b.field, a.field))
            }
            (Vertical, Vertical) => LiftedVector::zeros(jet.dim()),
        }
    }

    /// Bracket of two lifted fields.
    pub fn bracket(&self, a: Lift, b: Lift, jet: &FieldJet, at: &FiberPoint) -> Result<LiftedVector> {
        self.check(jet, at)?;
        Ok(self.bracket_unchecked(a, b, jet, at))
    }

    /// Derivative of `<<b, c>>` along the lifted field `along`.
    fn derivative_unchecked(
        &self,
        along: Lift,
        b: Lift,
        c: Lift,
        jet: &FieldJet,
        at: &FiberPoint,
    ) -> f64 {
        use LiftKind::*;
        if b.kind != c.kind {
            // horizontal and vertical lifts are orthogonal everywhere
            return 0.0;
        }
        let (bv, cv) = (jet.value(b.field), jet.value(c.field));
        match (along.kind, b.kind) {
            (Horizontal, Horizontal) => {
                jet.derivative(along.field, b.field).dot(cv)
                    + bv.dot(jet.derivative(along.field, c.field))
            }
            (Horizontal, Vertical) => {
                self.fiber_inner(&at.xi, jet.derivative(along.field, b.field), cv)
                    + self.fiber_inner(&at.xi, bv, jet.derivative(along.field, c.field))
            }
            (Vertical, Horizontal) => 0.0,
            (Vertical, Vertical) => {
                let jx = jet.value(along.field).j();
                let jxi = at.xi.j();
                self.params.delta_sq() * (bv.dot(&jx) * cv.dot(&jxi) + bv.dot(&jxi) * cv.dot(&jx))
            }
        }
    }

    /// Derivative of `<<b, c>>` along `along`, for any combination of lift kinds.
    pub fn directional_derivative(
        &self,
        along: Lift,
        b: Lift,
        c: Lift,
        jet: &FieldJet,
        at: &FiberPoint,
    ) -> Result<f64> {
        self.check(jet, at)?;
        Ok(self.derivative_unchecked(along, b, c, jet, at))
    }

    /// One of the four named differentiation rules (fields `X`, `Y`, `Z`).
    pub fn metric_derivative(&self, rule: DerivativeRule, jet: &FieldJet, at: &FiberPoint) -> Result<f64> {
        let (a, b, c) = rule.lifts();
        self.directional_derivative(a, b, c, jet, at)
    }

    fn connection_unchecked(&self, a: Lift, b: Lift, jet: &FieldJet, at: &FiberPoint) -> LiftedVector {
        use LiftKind::*;
        let xi = &at.xi;
        let jxi = xi.j();
        let d2 = self.params.delta_sq();
        let x = jet.value(a.field);
        let y = jet.value(b.field);
        // R(xi, V) W + delta^2 <V, J xi> R(xi, J xi) W
        let twisted = |v: &FrameVector, w: &FrameVector| {
            self.model.riemann_unchecked(xi, v, w)
                + self.model.riemann_unchecked(xi, &jxi, w) * (d2 * v.dot(&jxi))
        };
        match (a.kind, b.kind) {
            (Horizontal, Horizontal) => LiftedVector {
                h: jet.derivative(a.field, b.field).clone(),
                v: self.model.riemann_unchecked(x, y, xi) * -0.5,
            },
            (Horizontal, Vertical) => LiftedVector {
                h: twisted(y, x) * 0.5,
                v: jet.derivative(a.field, b.field).clone(),
            },
            (Vertical, Horizontal) => LiftedVector::horizontal(twisted(x, y) * 0.5),
            (Vertical, Vertical) => {
                let x_jxi = x.dot(&jxi);
                let y_jxi = y.dot(&jxi);
                let mut correction = d2 / (1.0 + d2 * xi.norm_squared());
                if self.variant == ConnectionVariant::FlippedFiberCorrection {
                    correction = -correction;
                }
                let mut v = y.j() * x_jxi + x.j() * y_jxi;
                v.add_scaled(-correction * (y.dot(xi) * x_jxi + x.dot(xi) * y_jxi), &jxi);
                LiftedVector::vertical(v * d2)
            }
        }
    }

    /// Levi-Civita connection `nabla~_a b` of the deformed metric on lifted fields.
    pub fn connection(&self, a: Lift, b: Lift, jet: &FieldJet, at: &FiberPoint) -> Result<LiftedVector> {
        self.check(jet, at)?;
        Ok(self.connection_unchecked(a, b, jet, at))
    }

    /// Worst defect of the Koszul formula over all eight lift-kind assignments
    /// of `(A, B, C)` to lifts of `(X, Y, Z)`.
    pub fn koszul_residual(&self, jet: &FieldJet, at: &FiberPoint) -> Result<f64> {
        self.check(jet, at)?;
        let mut worst: f64 = 0.0;
        for (ka, kb, kc) in kind_triples() {
            let a = Lift::new(ka, Field::X);
            let b = Lift::new(kb, Field::Y);
            let c = Lift::new(kc, Field::Z);
            let (av, bv, cv) = (self.lift_value(a, jet), self.lift_value(b, jet), self.lift_value(c, jet));
            let lhs = 2.0 * self.inner_unchecked(at, &self.connection_unchecked(a, b, jet, at), &cv);
            let rhs = self.derivative_unchecked(a, b, c, jet, at)
                + self.derivative_unchecked(b, a, c, jet, at)
                - self.derivative_unchecked(c, a, b, jet, at)
                + self.inner_unchecked(at, &self.bracket_unchecked(a, b, jet, at), &cv)
                + self.inner_unchecked(at, &self.bracket_unchecked(c, a, jet, at), &bv)
                - self.inner_unchecked(at, &self.bracket_unchecked(b, c, jet, at), &av);
            worst = worst.max((lhs - rhs).abs());
        }
        Ok(worst)
    }

    /// Worst component of `nabla~_A B - nabla~_B A - [A, B]` over lift kinds.
    pub fn torsion_residual(&self, jet: &FieldJet, at: &FiberPoint) -> Result<f64> {
        self.check(jet, at)?;
        let mut worst: f64 = 0.0;
        for ka in LiftKind::ALL {
            for kb in LiftKind::ALL {
                let a = Lift::new(ka, Field::X);
                let b = Lift::new(kb, Field::Y);
                let defect = self
                    .connection_unchecked(a, b, jet, at)
                    .sub(&self.connection_unchecked(b, a, jet, at))
                    .sub(&self.bracket_unchecked(a, b, jet, at));
                worst = worst.max(defect.max_abs());
            }
        }
        Ok(worst)
    }

    /// Worst defect of `A<<B, C>> = <<nabla~_A B, C>> + <<B, nabla~_A C>>` over lift kinds.
    pub fn compatibility_residual(&self, jet: &FieldJet, at: &FiberPoint) -> Result<f64> {
        self.check(jet, at)?;
        let mut worst: f64 = 0.0;
        for (ka, kb, kc) in kind_triples() {
            let a = Lift::new(ka, Field::X);
            let b = Lift::new(kb, Field::Y);
            let c = Lift::new(kc, Field::Z);
            let lhs = self.derivative_unchecked(a, b, c, jet, at);
            let rhs = self.inner_unchecked(at, &self.connection_unchecked(a, b, jet, at), &self.lift_value(c, jet))
                + self.inner_unchecked(at, &self.lift_value(b, jet), &self.connection_unchecked(a, c, jet, at));
            worst = worst.max((lhs - rhs).abs());
        }
        Ok(worst)
    }
}

fn kind_triples() -> impl Iterator<Item = (LiftKind, LiftKind, LiftKind)> {
    LiftKind::ALL.into_iter().flat_map(|a| {
        LiftKind::ALL
            .into_iter()
            .flat_map(move |b| LiftKind::ALL.into_iter().map(move |c| (a, b, c)))
    })
}

/// Worst residuals of a randomized connection sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ConnectionResiduals {
    pub koszul: f64,
    pub torsion: f64,
    pub compatibility: f64,
    pub jets: usize,
}

impl ConnectionResiduals {
    pub fn worst(&self) -> f64 {
        self.koszul.max(self.torsion).max(self.compatibility)
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            koszul: self.koszul.max(other.koszul),
            torsion: self.torsion.max(other.torsion),
            compatibility: self.compatibility.max(other.compatibility),
            jets: self.jets + other.jets,
        }
    }
}

/// Evaluates all three connection verifiers on `samples` random jets, each at
/// a random fiber point of norm `xi_norm`.
pub fn random_connection_sweep(
    geometry: &BergerSasaki,
    xi_norm: f64,
    samples: usize,
    seed: u64,
) -> ConnectionResiduals {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = geometry.model.dim();
    let mut out = ConnectionResiduals::default();
    for _ in 0..samples {
        let at = FiberPoint::new(FrameVector::random_unit(dim, &mut rng) * xi_norm);
        let jet = FieldJet::random(dim, &mut rng);
        // dimensions agree by construction
        out.koszul = out.koszul.max(geometry.koszul_residual(&jet, &at).unwrap());
        out.torsion = out.torsion.max(geometry.torsion_residual(&jet, &at).unwrap());
        out.compatibility = out.compatibility.max(geometry.compatibility_residual(&jet, &at).unwrap());
        out.jets += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};

    fn setup(n: usize, m: f64, delta: f64, seed: u64, xi_norm: f64) -> (BergerSasaki, FieldJet, FiberPoint) {
        let geometry = BergerSasaki::new(SpaceFormModel::new(n, m).unwrap(), BergerParams::new(delta).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let at = FiberPoint::new(FrameVector::random_unit(2 * n, &mut rng) * xi_norm);
        let jet = FieldJet::random(2 * n, &mut rng);
        (geometry, jet, at)
    }

    #[test]
    fn lifted_inner_reductions() {
        let (g, jet, at) = setup(2, 4.0, 0.8, 1, 1.0);
        let a = LiftedVector::new(jet.value(Field::X).clone(), jet.value(Field::Y).clone()).unwrap();
        let b = LiftedVector::new(jet.value(Field::Z).clone(), jet.value(Field::X).clone()).unwrap();
        let sasaki = BergerSasaki { params: BergerParams::sasaki(), ..g };
        assert_abs_diff_eq!(
            sasaki.lifted_inner(&at, &a, &b).unwrap(),
            a.h.dot(&b.h) + a.v.dot(&b.v),
            epsilon = 1e-14
        );
        // vertical J xi at unit xi: 1 + delta^2
        let hopf = LiftedVector::vertical(at.xi.j());
        assert_abs_diff_eq!(g.lifted_inner(&at, &hopf, &hopf).unwrap(), 1.0 + 0.64, epsilon = 1e-14);
        // horizontal vectors ignore the deformation
        let (ha, hb) = (LiftedVector::horizontal(a.h.clone()), LiftedVector::horizontal(b.h.clone()));
        assert_abs_diff_eq!(g.lifted_inner(&at, &ha, &hb).unwrap(), a.h.dot(&b.h), epsilon = 1e-14);
        // horizontal and vertical are orthogonal
        assert_eq!(g.lifted_inner(&at, &ha, &LiftedVector::vertical(a.v.clone())).unwrap(), 0.0);
    }

    #[test]
    fn lifted_inner_is_positive_definite() {
        let (g, _, at) = setup(3, -2.0, 2.0, 4, 1.7);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a = LiftedVector::new(
                FrameVector::random_gaussian(6, &mut rng),
                FrameVector::random_gaussian(6, &mut rng),
            )
            .unwrap();
            assert!(g.lifted_inner(&at, &a, &a).unwrap() >= a.h.norm_squared() + a.v.norm_squared() - 1e-12);
        }
    }

    #[test]
    fn brackets_of_lifts() {
        let (g, mut jet, at) = setup(2, 4.0, 0.5, 2, 1.0);
        let vv = g.bracket(Lift::v(Field::X), Lift::v(Field::Y), &jet, &at).unwrap();
        assert_eq!(vv.max_abs(), 0.0);
        let hv = g.bracket(Lift::h(Field::X), Lift::v(Field::Y), &jet, &at).unwrap();
        assert_eq!(hv.h.max_abs(), 0.0);
        assert_eq!(&hv.v, jet.derivative(Field::X, Field::Y));

        let flat = BergerSasaki::new(SpaceFormModel::flat(2), BergerParams::sasaki());
        jet.set_derivative(Field::X, Field::Y, FrameVector::zeros(4));
        jet.set_derivative(Field::Y, Field::X, FrameVector::zeros(4));
        let hh = flat.bracket(Lift::h(Field::X), Lift::h(Field::Y), &jet, &at).unwrap();
        assert_eq!(hh.max_abs(), 0.0);
    }

    #[test]
    fn vertical_derivative_of_horizontal_products_vanishes() {
        let (g, jet, at) = setup(2, 4.0, 1.3, 5, 0.6);
        assert_eq!(g.metric_derivative(DerivativeRule::HhByV, &jet, &at).unwrap(), 0.0);
        let sasaki = BergerSasaki { params: BergerParams::sasaki(), ..g };
        assert_eq!(sasaki.metric_derivative(DerivativeRule::VvByV, &jet, &at).unwrap(), 0.0);
    }

    #[test]
    fn vertical_rule_matches_fiber_finite_difference() {
        let (g, jet, at) = setup(2, 4.0, 1.1, 6, 0.9);
        let rule = g.metric_derivative(DerivativeRule::VvByV, &jet, &at).unwrap();
        let x = jet.value(Field::X);
        let (y, z) = (LiftedVector::vertical(jet.value(Field::Y).clone()), LiftedVector::vertical(jet.value(Field::Z).clone()));
        let f = |t: f64| {
            let moved = FiberPoint::new(&at.xi + &(x * t));
            g.lifted_inner(&moved, &y, &z).unwrap()
        };
        let t = 1e-4;
        let forward = (f(t) - f(0.0)) / t;
        let central = (f(t) - f(-t)) / (2.0 * t);
        assert!((forward - rule).abs() < 1e-2 * (1.0 + rule.abs()));
        assert!((central - rule).abs() < 1e-6 * (1.0 + rule.abs()));
    }

    #[test]
    fn vv_connection_vanishes_without_deformation() {
        let (g, jet, at) = setup(2, 4.0, 0.0, 7, 1.0);
        let c = g.connection(Lift::v(Field::X), Lift::v(Field::Y), &jet, &at).unwrap();
        assert_eq!(c.max_abs(), 0.0);
    }

    #[test]
    fn hh_connection_vanishes_on_flat_model_with_parallel_fields() {
        let (_, mut jet, at) = setup(2, 0.0, 0.9, 8, 1.0);
        let g = BergerSasaki::new(SpaceFormModel::flat(2), BergerParams::new(0.9).unwrap());
        jet.set_derivative(Field::X, Field::Y, FrameVector::zeros(4));
        let c = g.connection(Lift::h(Field::X), Lift::h(Field::Y), &jet, &at).unwrap();
        assert_eq!(c.max_abs(), 0.0);
    }

    #[test]
    fn vv_connection_on_diagonal() {
        // X = Y, |xi| = 1, a = <X, J xi>, b = <X, xi>:
        // vertical part = delta^2 (2a JX - 2 delta^2/(1+delta^2) a b J xi)
        let delta: f64 = 0.7;
        let (g, mut jet, at) = setup(2, 4.0, delta, 9, 1.0);
        let x = jet.value(Field::X).clone();
        jet.values[1] = x.clone();
        let (a, b) = (x.dot(&at.xi.j()), x.dot(&at.xi));
        let d2 = delta * delta;
        let expected = (x.j() * (2.0 * a) - at.xi.j() * (2.0 * d2 / (1.0 + d2) * a * b)) * d2;
        let got = g.connection(Lift::v(Field::X), Lift::v(Field::Y), &jet, &at).unwrap();
        assert_eq!(got.h.max_abs(), 0.0);
        assert_abs_diff_eq!((got.v - expected).max_abs(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn vv_connection_matches_inverse_fiber_metric() {
        // Solve G v = c for the vertical part, where G is the fiber metric matrix and
        // c_k = delta^2 (<Y, J xi> <JX, e_k> + <X, J xi> <JY, e_k>).
        let (g, jet, at) = setup(3, 4.0, 1.4, 10, 1.7);
        let jxi = at.xi.j();
        let d2 = g.params.delta_sq();
        let metric = DMatrix::identity(6, 6) + jxi.as_vector() * jxi.as_vector().transpose() * d2;
        let (x, y) = (jet.value(Field::X), jet.value(Field::Y));
        let covector: DVector<f64> =
            (x.j().as_vector() * y.dot(&jxi) + y.j().as_vector() * x.dot(&jxi)) * d2;
        let solved = metric.lu().solve(&covector).unwrap();
        let got = g.connection(Lift::v(Field::X), Lift::v(Field::Y), &jet, &at).unwrap();
        assert!((got.v.as_vector() - solved).amax() < 1e-12);
    }

    #[test]
    fn verifiers_accept_exact_connection() {
        for &(n, m, delta, xi_norm) in &[(2, 4.0, 0.7, 1.0), (1, -2.0, 0.0, 0.3), (4, 4.0, 2.0, 1.7)] {
            let (g, jet, at) = setup(n, m, delta, 11, xi_norm);
            assert!(g.koszul_residual(&jet, &at).unwrap() <= 1e-10);
            assert!(g.torsion_residual(&jet, &at).unwrap() <= 1e-10);
            assert!(g.compatibility_residual(&jet, &at).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn verifiers_reject_flipped_correction() {
        let (g, jet, at) = setup(2, 4.0, 1.0, 12, 1.0);
        let mutated = g.with_variant(ConnectionVariant::FlippedFiberCorrection);
        assert!(mutated.koszul_residual(&jet, &at).unwrap() > 1e-3);
        assert!(mutated.compatibility_residual(&jet, &at).unwrap() > 1e-3);
        // torsion cannot see it: the vv formula stays symmetric
        assert!(mutated.torsion_residual(&jet, &at).unwrap() <= 1e-10);
    }

    #[test]
    fn vv_torsion_is_exactly_symmetric() {
        let (g, jet, at) = setup(3, 4.0, 1.5, 13, 1.2);
        let xy = g.connection(Lift::v(Field::X), Lift::v(Field::Y), &jet, &at).unwrap();
        let yx = g.connection(Lift::v(Field::Y), Lift::v(Field::X), &jet, &at).unwrap();
        assert!(xy.sub(&yx).max_abs() <= 1e-14);
    }

    #[test]
    fn rejects_mismatched_dimensions() {
        let (g, jet, _) = setup(2, 4.0, 1.0, 14, 1.0);
        let at = FiberPoint::new(FrameVector::basis(6, 0));
        assert!(g.koszul_residual(&jet, &at).is_err());
        let values = [FrameVector::zeros(4), FrameVector::zeros(4), FrameVector::zeros(6)];
        let derivs = std::array::from_fn(|_| std::array::from_fn(|_| FrameVector::zeros(4)));
        assert!(FieldJet::new(values, derivs).is_err());
    }
}

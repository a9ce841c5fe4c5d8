use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::flow::{prepare_initial, Bundle, InitialState};
use crate::space_form::{BergerParams, FrameVector};

pub const LAMBDA_SQ_RANGE: (f64, f64) = (0.05, 0.8);

#[derive(Debug, Clone, PartialEq)]
pub struct InitialData {
    pub xi: FrameVector,
    pub w: FrameVector,
    pub u_dir: FrameVector,
}

/// Draws `xi` uniformly on the sphere of radius `xi_norm` (radius 1 on the
/// unit bundle), `w` Gaussian orthogonal to `xi` with `lambda^2` uniform in
/// [`LAMBDA_SQ_RANGE`], and a uniform horizontal direction.
pub fn random_initial_data<R: Rng + ?Sized>(
    n: usize,
    bundle: Bundle,
    params: &BergerParams,
    xi_norm: f64,
    rng: &mut R,
) -> InitialData {
    let dim = 2 * n;
    let radius = match bundle {
        Bundle::Tangent => xi_norm,
        Bundle::UnitTangent => 1.0,
    };
    let unit = FrameVector::random_unit(dim, rng);
    let xi = &unit * radius;
    let mut w = FrameVector::random_gaussian(dim, rng);
    w.add_scaled(-w.dot(&unit), &unit);
    let lambda_sq = rng.random_range(LAMBDA_SQ_RANGE.0..=LAMBDA_SQ_RANGE.1);
    let mu = w.dot(&xi.j());
    let current = w.norm_squared() + params.delta_sq() * mu * mu;
    let w = if current > 0.0 { w * (lambda_sq / current).sqrt() } else { w };
    let u_dir = FrameVector::random_unit(dim, rng);
    InitialData { xi, w, u_dir }
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random unit-speed initial state for `seed`.
pub fn random_initial_state(
    n: usize,
    bundle: Bundle,
    params: &BergerParams,
    xi_norm: f64,
    seed: u64,
) -> Result<InitialState> {
    let data = random_initial_data(n, bundle, params, xi_norm, &mut seeded_rng(seed));
    prepare_initial(&data.xi, &data.w, &data.u_dir, params, bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_states_respect_the_speed_window() {
        let params = BergerParams::new(0.9).unwrap();
        for seed in 0..200 {
            let state = random_initial_state(3, Bundle::UnitTangent, &params, 1.0, seed).unwrap().state;
            let lambda_sq = state.lambda_sq(&params);
            assert!((LAMBDA_SQ_RANGE.0 - 1e-12..=LAMBDA_SQ_RANGE.1 + 1e-12).contains(&lambda_sq));
            assert!((state.lifted_speed_sq(&params) - 1.0).abs() < 1e-12);
            let (norm_defect, radial) = state.unit_bundle_defects();
            assert!(norm_defect.abs() < 1e-12 && radial.abs() < 1e-12);
        }
    }

    #[test]
    fn tangent_bundle_radius() {
        let params = BergerParams::new(1.0).unwrap();
        let state = random_initial_state(2, Bundle::Tangent, &params, 0.5, 7).unwrap().state;
        assert!((state.xi.norm() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn same_seed_same_data() {
        let params = BergerParams::new(0.4).unwrap();
        let a = random_initial_data(4, Bundle::UnitTangent, &params, 1.0, &mut seeded_rng(3));
        let b = random_initial_data(4, Bundle::UnitTangent, &params, 1.0, &mut seeded_rng(3));
        assert_eq!(a, b);
    }
}

//! Random closed-loop systems with a prescribed `σ_m(G_T)`.
//!
//! `G_T` is a product of `T` lifts, each quadratic in `φ`, so scaling every
//! `φ_k(i)` by `c` scales `σ_m(G_T)` by exactly `c^{2T}`. The scale hitting a
//! target radius is therefore available in closed form.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::ClosedLoopSystem;
use crate::operators::{one_period_operator, spectral_radius};

/// Row-stochastic matrix with rows drawn uniformly from the simplex.
pub fn random_transition<R: Rng + ?Sized>(rng: &mut R, modes: usize) -> Matrix {
    let mut p = Matrix::from_fn(modes, modes, |_, _| Exp1.sample(rng));
    for mut row in p.row_iter_mut() {
        let s: f64 = row.sum();
        row /= s;
    }
    p
}

pub fn random_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Gaussian `φ_k(i)` and uniform transition rows, rescaled so that
/// `σ_m(G_T) = target`.
pub fn random_closed_loop<R: Rng + ?Sized>(
    rng: &mut R,
    modes: usize,
    n_x: usize,
    period: usize,
    target: f64,
) -> Result<ClosedLoopSystem> {
    if !(target > 0.0) {
        return Err(Error::Precondition(format!(
            "target radius {target} must be positive"
        )));
    }
    for _ in 0..100 {
        let transition = random_transition(rng, modes);
        let phi: Vec<Vec<Matrix>> = (0..period)
            .map(|_| (0..modes).map(|_| random_matrix(rng, n_x, n_x)).collect())
            .collect();
        let cl = ClosedLoopSystem::from_modes(phi.clone(), transition.clone())?;
        let base = spectral_radius(&one_period_operator(&cl))?;
        if base < 1e-8 {
            continue;
        }
        let c = (target / base).powf(1.0 / (2.0 * period as f64));
        let scaled = phi
            .into_iter()
            .map(|row| row.into_iter().map(|m| m * c).collect())
            .collect();
        return ClosedLoopSystem::from_modes(scaled, transition);
    }
    Err(Error::NumericalFailure(
        "could not draw a system with non-zero spectral radius".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hits_target_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(period, target) in &[(1, 0.5), (2, 0.95), (3, 1.3)] {
            let cl = random_closed_loop(&mut rng, 2, 2, period, target).unwrap();
            let r = spectral_radius(&one_period_operator(&cl)).unwrap();
            assert!(
                (r - target).abs() < 1e-8 * target.max(1.0),
                "{r} vs {target}"
            );
        }
    }

    #[test]
    fn transition_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_transition(&mut rng, 4);
        crate::model::validate_transition(&p).unwrap();
    }
}

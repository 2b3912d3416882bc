use mjls_core::linalg::{min_eigenvalue, Matrix};
use mjls_core::model::{ClosedLoopSystem, ModeIndexedSet};
use mjls_core::operators::{
    f_period_operator, l_step, lifted_l_step_matrix, lifted_step_matrix, one_period_operator,
    spectral_radius, stack, t_step,
};
use mjls_core::random_system::{random_closed_loop, random_matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DRAWS: u64 = 100;

fn draw(seed: u64) -> (ClosedLoopSystem, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA1_0000 + seed);
    let modes = rng.random_range(2..=4);
    let n_x = rng.random_range(1..=3);
    let period = rng.random_range(1..=4);
    let target = rng.random_range(0.1..2.0);
    let cl = random_closed_loop(&mut rng, modes, n_x, period, target).unwrap();
    (cl, rng)
}

fn random_set(rng: &mut ChaCha8Rng, cl: &ClosedLoopSystem, psd: bool) -> ModeIndexedSet {
    let n = cl.n_x();
    let entries = (0..cl.num_modes())
        .map(|_| {
            let a = random_matrix(rng, n, n);
            if psd {
                &a * a.transpose()
            } else {
                a
            }
        })
        .collect();
    ModeIndexedSet::new(entries).unwrap()
}

fn inner(u: &ModeIndexedSet, v: &ModeIndexedSet) -> f64 {
    u.iter().zip(v.iter()).map(|(a, b)| a.dot(b)).sum()
}

fn scale(v: &ModeIndexedSet) -> f64 {
    v.iter().map(|m| m.amax()).fold(1.0, f64::max)
}

#[test]
fn covariance_and_lyapunov_steps_are_adjoint() {
    for seed in 0..DRAWS {
        let (cl, mut rng) = draw(seed);
        let u = random_set(&mut rng, &cl, false);
        let v = random_set(&mut rng, &cl, false);
        for k in 0..cl.period() {
            let lhs = inner(&t_step(&u, &cl, k).unwrap(), &v);
            let rhs = inner(&u, &l_step(&v, &cl, k).unwrap());
            let tol = 1e-10 * (1.0 + lhs.abs().max(rhs.abs()));
            assert!(
                (lhs - rhs).abs() <= tol,
                "seed {seed}, k {k}: {lhs} vs {rhs}"
            );
        }
    }
}

#[test]
fn lifted_matrices_match_operators() {
    for seed in 0..DRAWS {
        let (cl, mut rng) = draw(seed);
        let v = random_set(&mut rng, &cl, false);
        for k in 0..cl.period() {
            let direct = stack(&t_step(&v, &cl, k).unwrap());
            let lifted = &lifted_step_matrix(&cl, k).matrix * stack(&v);
            assert!(
                (&direct - &lifted).amax() <= 1e-10 * (1.0 + direct.amax()),
                "seed {seed}"
            );

            let direct = stack(&l_step(&v, &cl, k).unwrap());
            let lifted = lifted_l_step_matrix(&cl, k) * stack(&v);
            assert!(
                (&direct - &lifted).amax() <= 1e-10 * (1.0 + direct.amax()),
                "seed {seed}"
            );
        }
        // the adjoint lift is the transpose of the covariance lift
        for k in 0..cl.period() {
            let t: Matrix = lifted_step_matrix(&cl, k).matrix.transpose();
            let l = lifted_l_step_matrix(&cl, k);
            assert!((&t - &l).amax() <= 1e-12 * (1.0 + l.amax()));
        }
    }
}

#[test]
fn period_operators_share_spectral_radius() {
    for seed in 0..DRAWS {
        let (cl, _) = draw(seed);
        let g = spectral_radius(&one_period_operator(&cl)).unwrap();
        let f = spectral_radius(&f_period_operator(&cl)).unwrap();
        assert!(
            (g - f).abs() <= 1e-9 * g.max(1.0),
            "seed {seed}: {g} vs {f}"
        );
    }
}

#[test]
fn steps_preserve_positive_semidefiniteness() {
    for seed in 0..DRAWS {
        let (cl, mut rng) = draw(seed);
        let v = random_set(&mut rng, &cl, true);
        for k in 0..cl.period() {
            for out in [t_step(&v, &cl, k).unwrap(), l_step(&v, &cl, k).unwrap()] {
                let s = scale(&out);
                for m in out.iter() {
                    assert!(min_eigenvalue(m) >= -1e-10 * s, "seed {seed}, k {k}");
                    assert!((m - m.transpose()).amax() <= 1e-12 * s);
                }
            }
        }
    }
}

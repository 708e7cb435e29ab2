use hydrolab::dynamics::*;
use hydrolab::model::{Confinement, Interaction, MacroPotentials, MicroModel, PeriodicPotential};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn sin2() -> MicroModel {
    MicroModel::quadratic(1, PeriodicPotential::SinSquared { amplitude: 1.0 }).unwrap()
}

fn random_state(rng: &mut ChaCha8Rng, n: usize, d: usize, eps: f64) -> ParticleState {
    let x = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let p = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    ParticleState::new(d, x, p, eps).unwrap()
}

#[test]
fn leapfrog_is_reversible() {
    let m = sin2();
    let macro_ = MacroPotentials::new(Confinement::LogGrowth { u0: 0.5 }, Interaction::Gaussian { v0: 0.3 });
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = random_state(&mut rng, 4, 1, 0.1);
    let fwd = integrate_strided(&s, &m, &macro_, 1e-3, 1000, 1000).unwrap();
    let mut back = fwd.last().clone();
    back.p.iter_mut().for_each(|p| *p = -*p);
    let end = integrate_strided(&back, &m, &macro_, 1e-3, 1000, 1000).unwrap();
    for (a, b) in end.last().x.iter().zip(&s.x) {
        assert!((a - b).abs() < 1e-9);
    }
    for (a, b) in end.last().p.iter().zip(&s.p) {
        assert!((a + b).abs() < 1e-9);
    }
}

#[test]
fn one_particle_matches_fine_rk4() {
    let eps = 0.1;
    let s = ParticleState::new(1, vec![0.03], vec![0.8], eps).unwrap();
    let dt = 1e-5;
    let tr = integrate_strided(&s, &sin2(), &MacroPotentials::zero(), dt, 100_000, 10_000).unwrap();
    // H = ½p² − sin²(πq): ẋ = p, ṗ = (π/ε) sin(2πx/ε), RK4 at dt/100
    let f = |x: f64, p: f64| (p, (PI / eps) * (2.0 * PI * x / eps).sin());
    let h = dt / 100.0;
    let (mut x, mut p) = (0.03, 0.8);
    let mut k = 1;
    for step in 1..=10_000_000u64 {
        let (a1, b1) = f(x, p);
        let (a2, b2) = f(x + 0.5 * h * a1, p + 0.5 * h * b1);
        let (a3, b3) = f(x + 0.5 * h * a2, p + 0.5 * h * b2);
        let (a4, b4) = f(x + h * a3, p + h * b3);
        x += h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
        p += h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
        if step % 1_000_000 == 0 {
            let st = &tr.states[k];
            assert!((st.x[0] - x).abs() < 1e-6 && (st.p[0] - p).abs() < 1e-6, "t={}: {} vs {x}", st.t, st.x[0]);
            k += 1;
        }
    }
    assert_eq!(k, tr.states.len());
}

#[test]
fn energy_drift_is_small() {
    let eps = 0.1;
    let m = sin2();
    let macro_ = MacroPotentials::new(Confinement::LogGrowth { u0: 0.5 }, Interaction::Gaussian { v0: 0.3 });
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = random_state(&mut rng, 8, 1, eps);
    let tr = integrate_strided(&s, &m, &macro_, 1e-4 * eps, 100_000, 100).unwrap();
    assert!(tr.symplectic && !tr.stiff);
    assert!(tr.relative_drift() <= 1e-6, "{}", tr.relative_drift());
}

#[test]
fn coarse_steps_are_flagged_stiff() {
    let s = ParticleState::new(1, vec![0.0], vec![1.0], 0.1).unwrap();
    let tr = integrate(&s, &sin2(), &MacroPotentials::zero(), 0.05, 2).unwrap();
    assert!(tr.stiff);
    assert!(integrate(&s, &sin2(), &MacroPotentials::zero(), 0.0, 2).is_err());
}

#[test]
fn free_minimal_action_is_closed_form() {
    let free = MicroModel::free(2);
    let z = MacroPotentials::zero();
    let x0 = [0.0, 0.0, 1.0, -1.0, 0.5, 0.5];
    let x1 = [1.0, 2.0, -1.0, 0.0, 0.5, 0.0];
    let t = 1.5;
    let exact: f64 = x0.iter().zip(&x1).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (3.0 * 2.0 * t);
    for knots in [1, 4, 16] {
        let opts = ActionOptions {
            knots,
            ..ActionOptions::default()
        };
        let r = minimal_action(&x0, &x1, t, &free, &z, 0.1, &opts).unwrap();
        assert!((r.value - exact).abs() <= 1e-6, "knots {knots}: {} vs {exact}", r.value);
    }
}

#[test]
fn refining_the_ansatz_does_not_raise_the_action() {
    let m = MicroModel::free(1);
    let macro_ = MacroPotentials::new(Confinement::LogGrowth { u0: 1.0 }, Interaction::Zero);
    let mut prev: Option<MinimalAction> = None;
    for knots in [2, 4, 8, 16] {
        let opts = ActionOptions {
            knots,
            warm_start: prev.as_ref().map(|p| p.path.clone()),
            ..ActionOptions::default()
        };
        let r = minimal_action(&[0.2], &[1.0], 1.0, &m, &macro_, 0.1, &opts).unwrap();
        if let Some(p) = &prev {
            assert!(r.value <= p.value + 1e-9, "{} > {}", r.value, p.value);
        }
        prev = Some(r);
    }
}

/// `min over lattice paths of Σ τ (½((x − y)/τ)² + U((x + y)/2))`.
fn dp_minimal_action(x0: f64, x1: f64, t: f64, u: impl Fn(f64) -> f64) -> f64 {
    let (lo, h, n) = (-0.5, 0.002, 1001);
    let steps = 50;
    let tau = t / steps as f64;
    let at = |i: usize| lo + h * i as f64;
    let i0 = ((x0 - lo) / h).round() as usize;
    let i1 = ((x1 - lo) / h).round() as usize;
    let reach = (3.0 * tau / h) as usize;
    let mut v = vec![f64::INFINITY; n];
    v[i0] = 0.0;
    for _ in 0..steps {
        let mut next = vec![f64::INFINITY; n];
        for (i, nx) in next.iter_mut().enumerate() {
            for j in i.saturating_sub(reach)..(i + reach + 1).min(n) {
                if v[j].is_finite() {
                    let vel = (at(i) - at(j)) / tau;
                    let c = v[j] + tau * (0.5 * vel * vel + u(0.5 * (at(i) + at(j))));
                    if c < *nx {
                        *nx = c;
                    }
                }
            }
        }
        v = next;
    }
    v[i1]
}

#[test]
fn one_particle_matches_space_time_dp() {
    let m = MicroModel::free(1);
    let macro_ = MacroPotentials::new(Confinement::LogGrowth { u0: 1.0 }, Interaction::Zero);
    let (x0, x1) = (0.0, 1.0);
    let oracle = dp_minimal_action(x0, x1, 1.0, |x| x.abs().ln_1p());
    let r = minimal_action(&[x0], &[x1], 1.0, &m, &macro_, 0.1, &ActionOptions::default()).unwrap();
    assert!((r.value - oracle).abs() <= 2e-3, "{} vs {oracle}", r.value);
}

#[test]
fn resting_path_pays_the_confinement() {
    let m = MicroModel::free(1);
    let macro_ = MacroPotentials::new(Confinement::LogGrowth { u0: 1.0 }, Interaction::Zero);
    let x = [0.5, -2.0];
    let p = PathEnsemble::resting(1, &x, 2.0, 4).unwrap();
    let expect = 2.0 * (1.5f64.ln() + 3.0f64.ln()) / 2.0;
    assert!((action_of_path(&p, &m, &macro_, 0.1).unwrap() - expect).abs() < 1e-12);
}

#[test]
fn gauss_quadrature_matches_dense_sums() {
    let m = sin2();
    let macro_ = MacroPotentials::new(Confinement::Zero, Interaction::Gaussian { v0: 0.7 });
    let eps = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        let intervals = 64;
        let times: Vec<f64> = (0..=intervals).map(|k| k as f64 / intervals as f64).collect();
        let mut knots = vec![vec![0.2, -0.3, 0.9]];
        for _ in 0..intervals {
            let last = knots.last().unwrap().clone();
            knots.push(last.iter().map(|v| v + rng.random_range(-0.05..0.05)).collect());
        }
        let path = PathEnsemble::new(1, times, knots).unwrap();
        let quad = action_of_path(&path, &m, &macro_, eps).unwrap();
        // a multiple of the interval count, so no cell straddles a velocity jump
        let dense = 640 * intervals;
        let dt = 1.0 / dense as f64;
        let mut total = 0.0;
        for k in 0..dense {
            let t = (k as f64 + 0.5) * dt;
            let iv = ((t * intervals as f64) as usize).min(intervals - 1);
            let x = path.position_at(t);
            let v = path.velocity(iv);
            total += dt * hydrolab::model::particle_lagrangian(&m, &macro_, eps, &x, &v).unwrap();
        }
        assert!((quad - total).abs() <= 1e-8, "{quad} vs {total}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn trajectories_are_permutation_equivariant(seed in any::<u64>(), n in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = MicroModel::quadratic(2, PeriodicPotential::SinSquared { amplitude: 0.5 }).unwrap();
        let macro_ = MacroPotentials::new(Confinement::LogGrowth { u0: 0.5 }, Interaction::Gaussian { v0: -0.2 });
        let s = random_state(&mut rng, n, 2, 0.2);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.rotate_left(1);
        perm.swap(0, n - 1);
        let a = integrate(&s, &m, &macro_, 1e-3, 50).unwrap();
        let b = integrate(&s.permuted(&perm), &m, &macro_, 1e-3, 50).unwrap();
        for (sa, sb) in a.states.iter().zip(&b.states) {
            prop_assert_eq!(&sa.permuted(&perm), sb);
        }
        prop_assert_eq!(a.energy, b.energy);
    }

    #[test]
    fn path_actions_respect_the_rough_bound(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = sin2();
        let macro_ = MacroPotentials::new(Confinement::LogGrowth { u0: 0.4 }, Interaction::Gaussian { v0: -0.6 });
        let knots: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let times = vec![0.0, 0.3, 0.5, 1.1, 2.0];
        let path = PathEnsemble::new(1, times, knots).unwrap();
        let a = action_of_path(&path, &m, &macro_, 0.1).unwrap();
        prop_assert!(a >= action_lower_bound(&m, &macro_, 2.0) - 1e-12);
    }
}

mod common;

use common::*;
use dqlq_core::lq::{asymmetry, block_diag, SYM_TOL};
use dqlq_core::qlearning::Schedule;
use dqlq_core::*;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(lo..hi, rows * cols).prop_map(move |v| Matrix::from_row_slice(rows, cols, &v))
}

/// `M Mᵀ + shift·I`.
fn psd(dim: usize, shift: f64) -> impl Strategy<Value = Matrix> {
    matrix(dim, dim, -1.5, 1.5).prop_map(move |r| &r * r.transpose() + Matrix::identity(dim, dim) * shift)
}

/// Well-conditioned invertible matrix.
fn invertible(dim: usize) -> impl Strategy<Value = Matrix> {
    matrix(dim, dim, -0.4, 0.4).prop_map(move |r| r + Matrix::identity(dim, dim))
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..=3, 1usize..=2)
}

fn random_system() -> impl Strategy<Value = SystemModel> {
    dims().prop_flat_map(|(n, m)| {
        (
            matrix(n, n, -1.0, 1.0),
            matrix(n, n, -1.0, 1.0),
            matrix(n, m, -1.0, 1.0),
            matrix(n, m, -1.0, 1.0),
            psd(n, 0.1),
            psd(m, 0.1),
        )
            .prop_map(|(a, ab, b, bb, q, r)| SystemModel::new(a, ab, b, bb, q, r).unwrap())
    })
}

fn relative_gap(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm() / a.norm().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn pi_map_block_congruence(
        (g, t1, t2, n) in dims().prop_flat_map(|(n, m)| (psd(n + m, 0.2), invertible(n), invertible(m), Just(n)))
    ) {
        let g = QFactor::new(g, n).unwrap();
        let t = block_diag(&t1, &t2);
        let moved = QFactor::symmetrized(&(t.transpose() * g.matrix() * &t), n).unwrap();
        let lhs = pi_map(&moved, 1e-12);
        let rhs = t1.transpose() * pi_map(&g, 1e-12) * &t1;
        prop_assert!(relative_gap(&lhs, &rhs) <= 1e-10, "gap {}", relative_gap(&lhs, &rhs));
    }

    #[test]
    fn pi_map_is_monotone(
        (g2, extra, n) in dims().prop_flat_map(|(n, m)| (psd(n + m, 0.1), psd(n + m, 0.0), Just(n)))
    ) {
        let g1 = QFactor::symmetrized(&(&g2 + extra), n).unwrap();
        let g2 = QFactor::new(g2, n).unwrap();
        let diff = pi_map(&g1, 1e-12) - pi_map(&g2, 1e-12);
        let min_eig = diff.symmetric_eigenvalues().min();
        prop_assert!(min_eig >= -1e-10, "min eigenvalue {min_eig}");
    }

    #[test]
    fn expectation_map_symmetric_and_above_cost_weight(
        sys in random_system(),
        mu in -1.5f64..1.5,
        sigma2 in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let noise = NoiseModel::new(mu, sigma2).unwrap();
        let dim = sys.n() + sys.m();
        let mut rng = RngStream::new(seed, 0);
        let root = Matrix::from_fn(dim, dim, |_, _| rng.standard_normal());
        let g = QFactor::symmetrized(&(&root * root.transpose()), sys.n()).unwrap();
        let out = expectation_map(&g, &sys, &noise);
        prop_assert!(asymmetry(out.matrix()) <= SYM_TOL);
        let slack = out.matrix() - QFactor::cost_weight(&sys).matrix();
        let min_eig = slack.symmetric_eigenvalues().min();
        prop_assert!(min_eig >= -1e-10 * out.frobenius().max(1.0), "min eigenvalue {min_eig}");
    }

    #[test]
    fn realization_is_affine_in_omega(
        (a, ab, b, bb) in (
            prop::collection::vec(-8i32..8, 4),
            prop::collection::vec(-8i32..8, 4),
            prop::collection::vec(-8i32..8, 2),
            prop::collection::vec(-8i32..8, 2),
        ),
        w1 in -8i32..8,
        w2 in -8i32..8,
        quarters in 0i32..=4,
    ) {
        // Small integers and quarter weights keep every operation exact.
        let f = |v: &[i32], r, c| Matrix::from_fn(r, c, |i, j| v[i * c + j] as f64);
        let sys = SystemModel::new(
            f(&a, 2, 2), f(&ab, 2, 2), f(&b, 2, 1), f(&bb, 2, 1),
            Matrix::identity(2, 2), Matrix::identity(1, 1),
        ).unwrap();
        let (wa, wb) = (quarters as f64 / 4.0, 1.0 - quarters as f64 / 4.0);
        let (w1, w2) = (w1 as f64, w2 as f64);
        let mixed = realize(&sys, wa * w1 + wb * w2);
        let (r1, r2) = (realize(&sys, w1), realize(&sys, w2));
        prop_assert_eq!(mixed.a_k, r1.a_k * wa + r2.a_k * wb);
        prop_assert_eq!(mixed.b_k, r1.b_k * wa + r2.b_k * wb);
    }

    #[test]
    fn stage_costs_are_nonnegative(
        sys in random_system(),
        seed in any::<u64>(),
    ) {
        let mut rng = RngStream::new(seed, 0);
        let k = Gain::new(Matrix::from_fn(sys.m(), sys.n(), |_, _| rng.standard_normal()));
        let x0 = Vector::from_fn(sys.n(), |_, _| rng.standard_normal());
        let traj = simulate_trajectory(&sys, &reference_noise(), &k, &x0, 30, &mut rng);
        prop_assert!(traj.stage_costs.iter().all(|&c| c >= 0.0));
    }

    #[test]
    fn gain_allocations_sum_to_n_identity(
        nodes in 2usize..10,
        (n, m) in dims(),
        masked in any::<bool>(),
    ) {
        let g = build_graph(&Topology::Complete(nodes)).unwrap();
        let mode = if masked { GainMode::Masked } else { GainMode::Uniform };
        let alloc = allocate_gains(&g, n, m, mode);
        for c in 0..n + m {
            let total: u64 = (0..nodes).map(|i| alloc.diagonal(i)[c]).sum();
            prop_assert_eq!(total, nodes as u64);
        }
        let sum = alloc.matrices().into_iter().fold(Matrix::zeros(n + m, n + m), |acc, l| acc + l);
        prop_assert_eq!(sum, Matrix::identity(n + m, n + m) * nodes as f64);
    }

    #[test]
    fn mixing_is_doubly_stochastic_with_simple_unit_eigenvalue(
        (nodes, extra) in (2usize..9).prop_flat_map(|n| (Just(n), prop::collection::vec((0..n, 0..n), 0..8))),
        weight_frac in 0.05f64..0.95,
    ) {
        // Random spanning path plus extra chords keeps the graph connected.
        let mut edges: Vec<(usize, usize)> = (1..nodes).map(|i| (i, i + 1)).collect();
        edges.extend(extra.into_iter().filter(|(a, b)| a != b).map(|(a, b)| (a + 1, b + 1)));
        let g = build_graph(&Topology::Edges(edges)).unwrap();
        let lmax = g.laplacian().symmetric_eigenvalues().max();
        let op = consensus_operator(&g, Some(weight_frac * 2.0 / lmax)).unwrap();
        let a = op.mixing();
        prop_assert_eq!(a, &a.transpose());
        for i in 0..nodes {
            prop_assert!((a.row(i).sum() - 1.0).abs() <= 1e-12);
            prop_assert!((a.column(i).sum() - 1.0).abs() <= 1e-12);
        }
        let eigs = a.symmetric_eigenvalues();
        prop_assert_eq!(eigs.iter().filter(|&&l| (l - 1.0).abs() <= 1e-9).count(), 1);

        // Brute force: all eigenvalues of the mixing matrix, drop the consensus mode.
        let closest = eigs.iter().map(|l| (l - 1.0).abs()).fold(f64::INFINITY, f64::min);
        prop_assert!(closest <= 1e-9);
        let brute = a
            .complex_eigenvalues()
            .iter()
            .map(|z| (z.re, z.norm()))
            .filter(|(re, _)| (re - 1.0).abs() > 1e-9)
            .map(|(_, n)| n)
            .fold(0.0, f64::max);
        prop_assert!((brute - op.rho()).abs() <= 1e-10, "brute {brute} reported {}", op.rho());
    }

    #[test]
    fn frozen_rounds_preserve_average_and_shrink_diameter(
        seed in any::<u64>(),
        topo in prop::sample::select(vec!["ring:4", "path:4", "star:5", "complete:3", "ring:6"]),
    ) {
        let sys = reference_system();
        let g = build_graph(&topo.parse().unwrap()).unwrap();
        let cons = consensus_operator(&g, None).unwrap();
        let alloc = allocate_gains(&g, 2, 1, GainMode::Uniform);
        let mut bank = SensorBank::initialize(&sys, g.nodes(), Initialization::Spread, seed);
        let real = realize(&sys, 1.0);
        for _ in 0..10 {
            let before_mean = bank.mean();
            let before_diam = bank.diameter();
            distributed_round(&mut bank, &cons, &alloc, RoundNoise::Shared(&real), &Schedule::frozen(), sys.q(), sys.r()).unwrap();
            prop_assert!((bank.mean() - before_mean).amax() <= 1e-12);
            prop_assert!(bank.diameter() <= before_diam + 1e-12);
            for est in bank.estimates() {
                prop_assert!(asymmetry(est.matrix()) <= SYM_TOL);
            }
        }
    }

    #[test]
    fn uniform_shared_average_follows_mean_innovation(
        seed in any::<u64>(),
        omega in -1.0f64..3.0,
        k0 in 0usize..50,
    ) {
        let sys = reference_system();
        let g = build_graph(&Topology::Ring(4)).unwrap();
        let cons = consensus_operator(&g, None).unwrap();
        let alloc = allocate_gains(&g, 2, 1, GainMode::Uniform);
        let sched = Schedule::reference();
        let bank0 = SensorBank::initialize(&sys, 4, Initialization::Spread, seed);
        let real = realize(&sys, omega);
        let alpha = sched.alpha(0);
        let mean_y = bank0.estimates().iter().map(|gi| y_operator(gi, &real, sys.q(), sys.r())).fold(Matrix::zeros(3, 3), |a, y| a + y) / 4.0;
        let mut bank = bank0.clone();
        distributed_round(&mut bank, &cons, &alloc, RoundNoise::Shared(&real), &sched, sys.q(), sys.r()).unwrap();
        prop_assert!((bank.mean() - (bank0.mean() + mean_y * alpha)).amax() <= 1e-12);

        // Identical estimates: one round is exactly one centralized step.
        let g0 = bank0.estimates()[0].clone();
        let mut same = SensorBank::new(vec![g0.clone(); 4]);
        let mut state = LearnerState::new(g0);
        for _ in 0..k0 {
            distributed_round(&mut same, &cons, &alloc, RoundNoise::Shared(&real), &sched, sys.q(), sys.r()).unwrap();
            centralized_step(&mut state, &real, &sched, sys.q(), sys.r()).unwrap();
        }
        distributed_round(&mut same, &cons, &alloc, RoundNoise::Shared(&real), &sched, sys.q(), sys.r()).unwrap();
        centralized_step(&mut state, &real, &sched, sys.q(), sys.r()).unwrap();
        for est in same.estimates() {
            prop_assert!((est.matrix() - state.estimate().matrix()).amax() <= 1e-12);
        }
    }
}

#[test]
fn schedule_partial_sums() {
    let s = Schedule::reference();
    let horizon = 1_000_000;
    let sum: f64 = (0..horizon).map(|k| s.alpha(k)).sum();
    assert!(sum > 100.0, "Σα = {sum}");

    // Σα² converges: increments past 10⁶ are below 1e-6, and the partial sums
    // stay under the integral bound α(0)² + ∫₀^∞ (x + 2)^(-1.2) dx = α(0)² + 5·2^(-0.2).
    let sq = |k: usize| s.alpha(k).powi(2);
    assert!((horizon..2 * horizon).step_by(997).all(|k| sq(k) < 1e-6));
    let total: f64 = (0..2 * horizon).map(sq).sum();
    let bound = sq(0) + 5.0 * 2f64.powf(-0.2);
    assert!(total < bound, "Σα² = {total} ≥ {bound}");
    let tail: f64 = (horizon..2 * horizon).map(sq).sum();
    let tail_bound = 5.0 * ((horizon + 1) as f64).powf(-0.2);
    assert!(tail < tail_bound);
    assert!((0..horizon).all(|k| s.alpha(k) > 0.0 && s.alpha(k) < 1.0));
}

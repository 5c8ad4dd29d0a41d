use dyntomo::channels::{feasibility_unitary, unitary_channel, DEFAULT_GAP_TOL};
use dyntomo::completeness::*;
use dyntomo::herm::{herm_to_vec, HermitianMatrix, DEFAULT_REL_TOL};
use dyntomo::linalg::{CMatrix, RMatrix, C64};
use dyntomo::sampling::{ginibre_povm, haar_unitary, random_state, SeededRng};
use dyntomo::schemes::{dynamical_scheme, make_povm, scheme_matrix, Povm, RationalTimeGrid, SchemeMatrix};
use dyntomo::Error;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn feasible_unitary(n: usize, rng: &mut SeededRng) -> CMatrix {
    loop {
        let u = haar_unitary(n, rng);
        if feasibility_unitary(&u, DEFAULT_GAP_TOL).unwrap().feasible {
            return u;
        }
    }
}

fn scheme(povm: &Povm, u: &CMatrix, l: usize) -> SchemeMatrix {
    scheme_matrix(&dynamical_scheme(povm, &unitary_channel(u).unwrap(), l).unwrap())
}

fn tetrahedral() -> Povm {
    let s = 1.0 / 3f64.sqrt();
    let dirs = [[s, s, s], [s, -s, -s], [-s, s, -s], [-s, -s, s]];
    let [x, y, z] = pauli_matrices();
    let effects = dirs
        .iter()
        .map(|a| {
            HermitianMatrix::identity(2)
                .add(&x.scale(a[0]))
                .add(&y.scale(a[1]))
                .add(&z.scale(a[2]))
                .scale(0.25)
        })
        .collect();
    make_povm(effects).unwrap()
}

/// For qubits every unit traceless direction is a normalized pure-state
/// difference, so the rank-1 margin is the smallest singular value of `H`
/// on the traceless subspace (spanned by Pauli matrices / sqrt 2).
fn analytic_qubit_margin(h: &SchemeMatrix) -> f64 {
    let cols: Vec<_> = pauli_matrices()
        .iter()
        .map(|p| herm_to_vec(&p.scale(std::f64::consts::FRAC_1_SQRT_2)))
        .collect();
    let z = RMatrix::from_fn(4, 3, |i, j| cols[j][i]);
    let hz = h.matrix() * z;
    let sv = hz.svd(false, false).singular_values;
    if h.matrix().nrows() < 3 {
        0.0
    } else {
        sv.min()
    }
}

/// Leibniz expansion of a small determinant.
fn leibniz_det(m: &CMatrix) -> C64 {
    fn perms(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in perms(k - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, k - 1);
                out.push(q);
            }
        }
        out
    }
    let n = m.nrows();
    perms(n)
        .into_iter()
        .map(|p| {
            let inversions = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).filter(|&(i, j)| p[i] > p[j]).count();
            let sign = if inversions % 2 == 0 { 1.0 } else { -1.0 };
            (0..n).map(|i| m[(i, p[i])]).product::<C64>() * sign
        })
        .sum()
}

#[test]
fn trivial_povm_is_never_complete() {
    let mut rng = SeededRng::new(1);
    let u = feasible_unitary(3, &mut rng);
    for l in [1, 4, 9] {
        let v = informational_complete(&scheme(&Povm::trivial(3, 3), &u, l), DEFAULT_REL_TOL).unwrap();
        assert_eq!(v.rank, 1);
        assert!(!v.complete);
        assert_eq!(v.stability_margin, 0.0);
        assert_eq!(v.target_rank, 9);
    }
}

#[test]
fn qubit_three_outcome_two_steps_is_complete() {
    let mut rng = SeededRng::new(2);
    let u = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(1., 0.), C64::from_polar(1.0, 1.0)]));
    let complete = (0..100)
        .filter(|_| {
            let v = informational_complete(&scheme(&ginibre_povm(2, 3, &mut rng).unwrap(), &u, 2), DEFAULT_REL_TOL).unwrap();
            assert_eq!(v.complete, v.rank == 4);
            assert_eq!(v.complete, v.stability_margin > 0.0);
            v.complete
        })
        .count();
    assert!(complete >= 99, "{complete}/100");
}

#[test]
fn too_few_outcomes_never_complete() {
    let mut rng = SeededRng::new(3);
    for _ in 0..20 {
        let u = feasible_unitary(3, &mut rng);
        let v = informational_complete(&scheme(&ginibre_povm(3, 2, &mut rng).unwrap(), &u, 20), DEFAULT_REL_TOL).unwrap();
        assert!(v.rank < 9);
    }
}

#[test]
fn scaling_keeps_verdicts() {
    let mut rng = SeededRng::new(4);
    let u = feasible_unitary(2, &mut rng);
    for l in 1..=3 {
        let h = scheme(&ginibre_povm(2, 2, &mut rng).unwrap(), &u, l);
        let base = informational_complete(&h, DEFAULT_REL_TOL).unwrap();
        for s in [1e-3, 7.0] {
            let v = informational_complete(&h.scaled(s), DEFAULT_REL_TOL).unwrap();
            assert_eq!(v.complete, base.complete);
            for (a, b) in v.singular_values.iter().zip(&base.singular_values) {
                assert!((a - s * b).abs() < 1e-12 * s.max(1.0));
            }
            let opts = MarginOptions { restarts: 4, ..MarginOptions::default() };
            let m0 = rank_r_margin(&h, 1, &opts).unwrap();
            let m1 = rank_r_margin(&h.scaled(s), 1, &opts).unwrap();
            assert_eq!(m0.verdict, m1.verdict);
        }
    }
}

#[test]
fn zero_scheme_has_zero_margin() {
    let h = SchemeMatrix::from_parts(RMatrix::zeros(3, 4), 1, 3, 2).unwrap();
    let m = rank_r_margin(&h, 1, &MarginOptions { restarts: 2, ..MarginOptions::default() }).unwrap();
    assert_eq!(m.value, 0.0);
    assert_eq!(m.verdict, MarginVerdict::ViolationFound);
    assert_eq!(qubit_margin_oracle(&h, 12).unwrap(), 0.0);
}

#[test]
fn two_outcome_single_step_has_violation() {
    let mut rng = SeededRng::new(5);
    for _ in 0..5 {
        let h = scheme_matrix(&dynamical_scheme(
            &ginibre_povm(2, 2, &mut rng).unwrap(),
            &unitary_channel(&CMatrix::identity(2, 2)).unwrap(),
            1,
        ).unwrap());
        assert!(qubit_margin_oracle(&h, 24).unwrap() < 1e-6);
        let m = rank_r_margin(&h, 1, &MarginOptions::default()).unwrap();
        assert_eq!(m.verdict, MarginVerdict::ViolationFound);
    }
}

#[test]
fn tetrahedral_povm_is_a_candidate_matching_the_oracle() {
    let h = scheme_matrix(&dynamical_scheme(&tetrahedral(), &unitary_channel(&CMatrix::identity(2, 2)).unwrap(), 1).unwrap());
    let analytic = analytic_qubit_margin(&h);
    // tetrahedral effects give |H X| = |X| / sqrt(6) on traceless X
    assert!((analytic - 1.0 / 6f64.sqrt()).abs() < 1e-12);
    let oracle = qubit_margin_oracle(&h, 24).unwrap();
    assert!((oracle - analytic).abs() < 1e-9 * analytic);
    let m = rank_r_margin(&h, 1, &MarginOptions::default()).unwrap();
    assert_eq!(m.verdict, MarginVerdict::CompleteCandidate);
    assert!((m.value - oracle).abs() < 0.05 * oracle);
}

#[test]
fn oracle_on_traceless_isometry_is_one() {
    // rows pick the Pauli coordinates of X (each |.| scaled by 1/sqrt 2), an isometry on traceless X
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let rows = [[s, -s, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
    let h = SchemeMatrix::from_parts(RMatrix::from_fn(3, 4, |i, j| rows[i][j]), 1, 3, 2).unwrap();
    assert!((qubit_margin_oracle(&h, 16).unwrap() - 1.0).abs() < 1e-9);
    assert!((analytic_qubit_margin(&h) - 1.0).abs() < 1e-12);

    let wrong = SchemeMatrix::from_parts(RMatrix::zeros(2, 9), 1, 2, 3).unwrap();
    assert!(matches!(qubit_margin_oracle(&wrong, 8), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn margin_agrees_with_oracles_on_random_qubit_schemes() {
    let mut rng = SeededRng::new(6);
    for trial in 0..12 {
        let u = feasible_unitary(2, &mut rng);
        let h = scheme(&ginibre_povm(2, 2 + trial % 2, &mut rng).unwrap(), &u, 1 + trial % 3);
        let analytic = analytic_qubit_margin(&h);
        let oracle = qubit_margin_oracle(&h, 24).unwrap();
        let m = rank_r_margin(&h, 1, &MarginOptions { seed: trial as u64, ..MarginOptions::default() }).unwrap();
        assert!(m.value <= oracle + 1e-6);
        if oracle < 1e-6 {
            assert!(m.value < 1e-6 && analytic < 1e-6);
        } else {
            assert!((m.value - oracle).abs() < 0.05 * oracle, "{} vs {oracle}", m.value);
            assert!((analytic - oracle).abs() < 1e-6 * oracle);
        }
    }
}

#[test]
fn witness_invariants() {
    let mut rng = SeededRng::new(7);
    for (n, r, m, l) in [(3, 1, 3, 2), (3, 1, 3, 4), (4, 2, 4, 3), (2, 2, 2, 2)] {
        let u = feasible_unitary(n, &mut rng);
        let h = scheme(&ginibre_povm(n, m, &mut rng).unwrap(), &u, l);
        let est = rank_r_margin(&h, r, &MarginOptions { restarts: 6, ..MarginOptions::default() }).unwrap();
        let w = &est.witness;
        assert!((w.norm() - 1.0).abs() < 1e-8);
        assert!(w.trace().abs() < 1e-8);
        let ev = w.eigenvalues();
        assert!(ev.iter().filter(|&&e| e > 1e-7).count() <= r);
        assert!(ev.iter().filter(|&&e| e < -1e-7).count() <= r);
        assert!((h.apply(w).unwrap().norm() - est.value).abs() < 1e-8);
        assert_eq!(est.restart_values.len(), 6);
        assert!((0.0..=1.0).contains(&est.converged_fraction));
        let diff = est.states.0.as_hermitian().sub(est.states.1.as_hermitian());
        assert!(diff.scale(1.0 / diff.norm()).sub(w).norm() < 1e-8);
    }
}

#[test]
fn margin_argument_errors() {
    let h = SchemeMatrix::from_parts(RMatrix::zeros(3, 4), 1, 3, 2).unwrap();
    assert!(rank_r_margin(&h, 0, &MarginOptions::default()).is_err());
    assert!(rank_r_margin(&h, 3, &MarginOptions::default()).is_err());
    assert!(rank_r_margin(&h, 1, &MarginOptions { restarts: 0, ..MarginOptions::default() }).is_err());
}

#[test]
fn pair_discrimination_examples() {
    let mut rng = SeededRng::new(8);
    let u = feasible_unitary(3, &mut rng);
    let h = scheme(&ginibre_povm(3, 4, &mut rng).unwrap(), &u, 3);
    assert!(informational_complete(&h, DEFAULT_REL_TOL).unwrap().complete);
    for r in 1..=3 {
        let d = pair_discrimination(&h, r, 2000, 9).unwrap();
        assert_eq!(d.failures, 0);
        assert!(d.min_separation > 0.0);
    }

    let trivial = scheme(&Povm::trivial(3, 4), &u, 3);
    let d = pair_discrimination(&trivial, 2, 50, 9).unwrap();
    assert_eq!(d.failures, 50);
    assert!(d.min_separation < 1e-12);

    let rho = random_state(3, 1, &mut rng).unwrap();
    assert_eq!(pair_separation(&h, &rho, &rho).unwrap(), None);
    let mut acc = PairDiscrimination { min_separation: f64::INFINITY, failures: 0, skipped: 0, evaluated: 0 };
    acc.record(pair_separation(&h, &rho, &rho).unwrap());
    assert_eq!((acc.skipped, acc.evaluated), (1, 0));
}

#[test]
fn vandermonde_examples() {
    let one = c(1.0, 0.0);
    let lambdas = [one, c(0.0, 1.0), c(0.0, -1.0)];
    let d = vandermonde_det(&lambdas, &[one, one, one]).unwrap();
    let m = CMatrix::from_fn(3, 3, |i, j| lambdas[i].powu(j as u32));
    let oracle = leibniz_det(&m);
    assert!(oracle.norm() > 1.0);
    assert!((d.product_formula - oracle).norm() < 1e-10);
    assert!((d.direct - oracle).norm() < 1e-10);
    assert!((d.shifted - oracle).norm() < 1e-10);

    let d = vandermonde_det(&lambdas, &[one, c(0.0, 0.0), one]).unwrap();
    assert_eq!(d.product_formula, c(0.0, 0.0));
    assert!(d.direct.norm() < 1e-15);

    let repeated = [one, c(0.5, 0.5), c(0.5, 0.5)];
    let d = vandermonde_det(&repeated, &[one, one, one]).unwrap();
    assert!(d.product_formula.norm() < 1e-15 && d.direct.norm() < 1e-15);

    assert!(matches!(
        vandermonde_det(&[one, c(0.0, 0.0), c(0.3, 0.0)], &[one, one, one]),
        Err(Error::ZeroEigenvalue(1))
    ));
    assert!(vandermonde_det(&[c(2.0, 0.0), one], &[one, one]).is_err());
    assert!(vandermonde_det(&[one, one], &[one]).is_err());
}

#[test]
fn vandermonde_product_matches_expansion() {
    let mut rng = SeededRng::new(10);
    for trial in 0..300 {
        let k = 1 + trial % 2;
        let len = 2 * k + 1;
        let mut lambdas = vec![c(1.0, 0.0)];
        lambdas.extend((1..len).map(|_| C64::from_polar(0.3 + rng.uniform(), 2.0 * std::f64::consts::PI * rng.uniform())));
        let weights: Vec<C64> = (0..len).map(|_| rng.complex_normal()).collect();
        let d = vandermonde_det(&lambdas, &weights).unwrap();
        let m = CMatrix::from_fn(len, len, |i, j| weights[i] * lambdas[i].powu(j as u32));
        let oracle = leibniz_det(&m);
        let scale = oracle.norm().max(1e-300);
        assert!((d.product_formula - oracle).norm() / scale < 1e-9);
        assert!((d.direct - oracle).norm() / scale < 1e-9);
        assert!((d.shifted - oracle).norm() / scale < 1e-9);
    }
}

#[test]
fn rational_vandermonde_examples() {
    let empty = rational_vandermonde(&RationalTimeGrid::parse_list("").unwrap(), &[]).unwrap();
    assert_eq!(empty.matrix, vec![vec![c(1.0, 0.0)]]);
    assert!(empty.invertible);

    let half = RationalTimeGrid::parse_list("1/2").unwrap();
    let v = rational_vandermonde(&half, &[c(-1.0, 0.0)]).unwrap();
    let want = [[c(1., 0.), c(1., 0.)], [c(1., 0.), c(0., 1.)]];
    for (row, want_row) in v.matrix.iter().zip(&want) {
        for (got, w) in row.iter().zip(want_row) {
            assert!((got - w).norm() < 1e-15);
        }
    }
    let m = CMatrix::from_fn(2, 2, |i, j| v.matrix[i][j]);
    assert!((leibniz_det(&m) - c(-1.0, 1.0)).norm() < 1e-15);
    assert!(v.invertible);

    assert!(rational_vandermonde(&half, &[c(1.0, 0.0)]).is_err());
    assert!(rational_vandermonde(&half, &[c(0.0, 0.0)]).is_err());
    assert!(rational_vandermonde(&half, &[c(0.5, 0.0), c(0.2, 0.0)]).is_err());
}

#[test]
fn rational_vandermonde_random_draws_are_invertible() {
    let mut rng = SeededRng::new(11);
    for _ in 0..100 {
        let l = 1 + rng.below(4) as usize;
        let den = 2 + rng.below(6);
        let mut nums: Vec<u64> = (1..den).collect();
        // random l-subset of 1..den, sorted
        for i in 0..nums.len() {
            let j = i + rng.below((nums.len() - i) as u64) as usize;
            nums.swap(i, j);
        }
        let mut chosen: Vec<u64> = nums.into_iter().take(l).collect();
        chosen.sort_unstable();
        let l = chosen.len();
        let text: Vec<String> = chosen.iter().map(|n| format!("{n}/{den}")).collect();
        let grid = RationalTimeGrid::parse_list(&text.join(",")).unwrap();
        let lambdas: Vec<C64> = (0..l).map(|_| C64::from_polar(0.2 + rng.uniform(), 6.0 * rng.uniform() - 3.0)).collect();
        let v = rational_vandermonde(&grid, &lambdas).unwrap();
        assert!(v.invertible, "{grid:?} {lambdas:?} {}", v.min_singular);
        // entries follow the principal branch
        for (i, lam) in lambdas.iter().enumerate() {
            for (j, t) in grid.times().iter().enumerate() {
                let want = C64::from_polar(lam.norm().powf(t.value()), lam.arg() * t.value());
                assert!((v.matrix[i + 1][j + 1] - want).norm() < 1e-12);
            }
        }
    }
}

#[test]
fn complete_schemes_survive_small_perturbations() {
    let mut rng = SeededRng::new(12);
    let mut checked = 0;
    while checked < 5 {
        let u = feasible_unitary(2, &mut rng);
        let h = scheme(&ginibre_povm(2, 3, &mut rng).unwrap(), &u, 2);
        let v = informational_complete(&h, DEFAULT_REL_TOL).unwrap();
        if !v.complete {
            continue;
        }
        checked += 1;
        for _ in 0..20 {
            let p = random_perturbation(&h, 0.4 * v.stability_margin, &mut rng).unwrap();
            assert!((h.distance(&p).unwrap() - 0.4 * v.stability_margin).abs() < 1e-9);
            assert!(informational_complete(&p, DEFAULT_REL_TOL).unwrap().complete);
            // block-wise unitality survives
            let rho = random_state(2, 2, &mut rng).unwrap();
            let y = p.apply(rho.as_hermitian()).unwrap();
            for b in 0..2 {
                assert!(((0..3).map(|i| y[3 * b + i]).sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}

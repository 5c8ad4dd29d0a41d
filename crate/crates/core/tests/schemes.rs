use dyntomo::channels::{semigroup_channel, unitary_channel, Direction, Generator};
use dyntomo::herm::{numerical_rank, HermitianMatrix, DEFAULT_REL_TOL};
use dyntomo::linalg::{CMatrix, RMatrix, C64};
use dyntomo::sampling::{ginibre_povm, haar_unitary, random_cptp, random_hermitian, random_state, random_unital_generator, SeededRng};
use dyntomo::schemes::*;
use dyntomo::Error;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn herm(m: CMatrix) -> HermitianMatrix {
    HermitianMatrix::new(m).unwrap()
}

fn pauli_x() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)])
}

fn pauli_y() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(0., -1.), c(0., 1.), c(0., 0.)])
}

fn half(id_sign: f64, m: &CMatrix) -> HermitianMatrix {
    herm((CMatrix::identity(2, 2) + m * c(id_sign, 0.0)) * c(0.5, 0.0))
}

/// Largest singular value by power iteration on `A^T A`.
fn power_norm(a: &RMatrix) -> f64 {
    let ata = a.transpose() * a;
    let mut v = nalgebra::DVector::from_element(ata.ncols(), 1.0);
    let mut lambda = 0.0;
    for _ in 0..5000 {
        let w = &ata * &v;
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        lambda = nw;
        v = w / nw;
    }
    lambda.sqrt()
}

#[test]
fn make_povm_examples() {
    let half_id = HermitianMatrix::identity(2).scale(0.5);
    assert!(make_povm(vec![half_id.clone(), half_id]).is_ok());
    let p0 = HermitianMatrix::from_real_diagonal(&[1.0, 0.0]);
    let p1 = HermitianMatrix::from_real_diagonal(&[0.0, 1.0]);
    assert!(make_povm(vec![p0.clone(), p1]).is_ok());
    match make_povm(vec![p0.clone(), p0.clone()]) {
        Err(Error::IncompletePovm { deviation, deviation_norm }) => {
            let want = HermitianMatrix::from_real_diagonal(&[1.0, -1.0]);
            assert!(deviation.sub(&want).norm() < 1e-12);
            assert!((deviation_norm - 2f64.sqrt()).abs() < 1e-12);
        }
        other => panic!("expected completeness error, got {other:?}"),
    }
    let neg = HermitianMatrix::from_real_diagonal(&[1.5, -0.5]);
    let rest = HermitianMatrix::from_real_diagonal(&[-0.5, 1.5]);
    assert!(matches!(make_povm(vec![neg, rest]), Err(Error::NotPsd { .. })));
}

#[test]
fn single_block_scheme_is_the_povm() {
    let mut rng = SeededRng::new(1);
    let povm = ginibre_povm(3, 4, &mut rng).unwrap();
    let ch = unitary_channel(&haar_unitary(3, &mut rng)).unwrap();
    let s = dynamical_scheme(&povm, &ch, 1).unwrap();
    assert_eq!(s.block_count(), 1);
    assert_eq!(scheme_matrix(&s).matrix(), &povm.matrix());
    assert!(dynamical_scheme(&povm, &ch, 0).is_err());
    let other = unitary_channel(&haar_unitary(2, &mut rng)).unwrap();
    assert!(matches!(dynamical_scheme(&povm, &other, 2), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn conjugation_rotates_x_to_y() {
    let u = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(1., 0.), c(0., 1.)]));
    let povm = make_povm(vec![half(1.0, &pauli_x()), half(-1.0, &pauli_x())]).unwrap();
    let s = dynamical_scheme(&povm, &unitary_channel(&u).unwrap(), 2).unwrap();
    let block = &s.blocks()[1];
    // oracle: U^dagger Q U by hand
    for (k, q) in povm.effects().iter().enumerate() {
        let want = u.adjoint() * q.matrix() * &u;
        assert!((block.effects()[k].matrix() - &want).norm() < 1e-12);
    }
    // and the rotated effects are (I -+ Y)/2
    assert!(block.effects()[0].sub(&half(-1.0, &pauli_y())).norm() < 1e-12);
    assert!(block.effects()[1].sub(&half(1.0, &pauli_y())).norm() < 1e-12);
}

#[test]
fn trivial_povm_blocks_are_identical() {
    let mut rng = SeededRng::new(2);
    let povm = Povm::trivial(3, 4);
    let ch = random_cptp(3, 2, &mut rng).unwrap();
    let s = dynamical_scheme(&povm, &ch, 5).unwrap();
    for b in s.blocks() {
        for (e, f) in b.effects().iter().zip(povm.effects()) {
            assert!(e.sub(f).norm() < 1e-12);
        }
    }
    assert_eq!(numerical_rank(scheme_matrix(&s).matrix(), DEFAULT_REL_TOL).unwrap().rank, 1);
}

#[test]
fn blocks_are_heisenberg_images() {
    let mut rng = SeededRng::new(3);
    let povm = ginibre_povm(3, 2, &mut rng).unwrap();
    let ch = random_cptp(3, 2, &mut rng).unwrap();
    let s = dynamical_scheme(&povm, &ch, 4).unwrap();
    for (j, block) in s.blocks().iter().enumerate() {
        for (e, q) in block.effects().iter().zip(povm.effects()) {
            let want = ch.apply_power(q, j, Direction::Heisenberg).unwrap();
            assert!(e.sub(&want).norm() < 1e-8);
        }
        assert!(make_povm(block.effects().to_vec()).is_ok());
    }
}

#[test]
fn timed_scheme_examples() {
    let mut rng = SeededRng::new(4);
    let povm = ginibre_povm(2, 2, &mut rng).unwrap();
    let g = random_unital_generator(2, 2, &mut rng).unwrap();
    let s = timed_scheme(&povm, &g, &RationalTimeGrid::parse_list("").unwrap()).unwrap();
    assert_eq!(s.block_count(), 1);

    let h = HermitianMatrix::from_real_diagonal(&[0.0, 1.0]);
    let gen = Generator::hamiltonian_only(h).unwrap();
    let s = timed_scheme(&povm, &gen, &RationalTimeGrid::parse_list("1/2").unwrap()).unwrap();
    let u = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(1., 0.), C64::from_polar(1.0, -0.5)]));
    let d = dynamical_scheme(&povm, &unitary_channel(&u).unwrap(), 2).unwrap();
    for (a, b) in s.blocks()[1].effects().iter().zip(d.blocks()[1].effects()) {
        assert!(a.sub(b).norm() < 1e-9);
    }

    let grid = RationalTimeGrid::parse_list("1/4,1/2,3/4").unwrap();
    let s = timed_scheme(&povm, &g, &grid).unwrap();
    assert_eq!(s.block_count(), 4);
    for (k, block) in s.blocks().iter().enumerate() {
        assert!(make_povm(block.effects().to_vec()).is_ok());
        if k > 0 {
            let ch = semigroup_channel(&g, grid.times()[k - 1].value()).unwrap();
            let want = ch.apply(&povm.effects()[0], Direction::Heisenberg).unwrap();
            assert!(block.effects()[0].sub(&want).norm() < 1e-9);
        }
    }
}

#[test]
fn time_grid_validation() {
    for bad in ["1/2,1/3", "0/1", "1/1", "3/2", "1/2,1/2", "x"] {
        assert!(RationalTimeGrid::parse_list(bad).is_err(), "{bad}");
    }
    let g = RationalTimeGrid::parse_list("1/4,1/3,5/6").unwrap();
    assert_eq!(g.common_denominator(), 12);
    assert_eq!(g.numerators(), vec![3, 4, 10]);
    let json = serde_json::to_string(&g).unwrap();
    assert_eq!(json, r#"["1/4","1/3","5/6"]"#);
    assert_eq!(serde_json::from_str::<RationalTimeGrid>(&json).unwrap(), g);
}

#[test]
fn scheme_matrix_shape_rows_and_unitality() {
    let mut rng = SeededRng::new(5);
    let povm = ginibre_povm(2, 3, &mut rng).unwrap();
    let ch = unitary_channel(&haar_unitary(2, &mut rng)).unwrap();
    let s = dynamical_scheme(&povm, &ch, 2).unwrap();
    let h = scheme_matrix(&s);
    assert_eq!(h.matrix().shape(), (6, 4));
    assert_eq!(h.matrix().rows(0, 3).into_owned(), povm.matrix());
    for _ in 0..20 {
        let rho = random_state(2, 2, &mut rng).unwrap();
        let p = h.apply(rho.as_hermitian()).unwrap();
        for (j, block) in s.blocks().iter().enumerate() {
            let sum: f64 = (0..3).map(|i| p[3 * j + i]).sum();
            assert!((sum - 1.0).abs() < 1e-8);
            for (i, e) in block.effects().iter().enumerate() {
                assert!((p[3 * j + i] - e.inner(rho.as_hermitian())).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn scheme_matrix_is_linear() {
    let mut rng = SeededRng::new(6);
    let povm = ginibre_povm(3, 3, &mut rng).unwrap();
    let ch = random_cptp(3, 2, &mut rng).unwrap();
    let h = scheme_matrix(&dynamical_scheme(&povm, &ch, 3).unwrap());
    let x = random_hermitian(3, &mut rng);
    let y = random_hermitian(3, &mut rng);
    let (a, b) = (0.7, -1.3);
    let lhs = h.apply(&x.scale(a).add(&y.scale(b))).unwrap();
    let rhs = h.apply(&x).unwrap() * a + h.apply(&y).unwrap() * b;
    assert!((lhs - rhs).norm() < 1e-10);
}

#[test]
fn rank_is_monotone_in_steps() {
    let mut rng = SeededRng::new(7);
    for _ in 0..10 {
        let povm = ginibre_povm(3, 2, &mut rng).unwrap();
        let ch = random_cptp(3, 2, &mut rng).unwrap();
        let mut prev = 0;
        for l in 1..=10 {
            let h = scheme_matrix(&dynamical_scheme(&povm, &ch, l).unwrap());
            let rank = numerical_rank(h.matrix(), DEFAULT_REL_TOL).unwrap().rank;
            assert!(rank >= prev);
            prev = rank;
        }
    }
}

#[test]
fn scheme_distance_examples() {
    let mut rng = SeededRng::new(8);
    let povm = ginibre_povm(2, 3, &mut rng).unwrap();
    let ch = unitary_channel(&haar_unitary(2, &mut rng)).unwrap();
    let s1 = dynamical_scheme(&povm, &ch, 3).unwrap();
    assert_eq!(scheme_distance(&s1, &s1).unwrap(), 0.0);

    let other = ginibre_povm(2, 3, &mut rng).unwrap();
    let s2 = dynamical_scheme(&other, &ch, 3).unwrap();
    let d12 = scheme_distance(&s1, &s2).unwrap();
    assert!((d12 - scheme_distance(&s2, &s1).unwrap()).abs() < 1e-12);
    assert!((d12 - power_norm(&(scheme_matrix(&s1).matrix() - scheme_matrix(&s2).matrix()))).abs() < 1e-9);

    // shrink toward the trivial POVM: the distance is eps * |H_trivial - H|
    let eps = 1e-3;
    let shrunk: Vec<HermitianMatrix> = povm
        .effects()
        .iter()
        .map(|e| e.scale(1.0 - eps).add(&HermitianMatrix::identity(2).scale(eps / 3.0)))
        .collect();
    let s3 = dynamical_scheme(&make_povm(shrunk).unwrap(), &ch, 3).unwrap();
    let trivial = dynamical_scheme(&Povm::trivial(2, 3), &ch, 3).unwrap();
    let bound = power_norm(&(scheme_matrix(&trivial).matrix() - scheme_matrix(&s1).matrix()));
    let d = scheme_distance(&s1, &s3).unwrap();
    assert!(d > 0.0 && d <= bound * eps * (1.0 + 1e-6), "{d} vs {}", bound * eps);

    let short = dynamical_scheme(&povm, &ch, 2).unwrap();
    assert!(matches!(scheme_distance(&s1, &short), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn bundle_round_trip_and_csv() {
    let mut rng = SeededRng::new(9);
    let povm = ginibre_povm(2, 2, &mut rng).unwrap();
    let ch = random_cptp(2, 2, &mut rng).unwrap();
    let s = dynamical_scheme(&povm, &ch, 3).unwrap();
    let json = serde_json::to_string(&s).unwrap();
    let back: MeasurementScheme = serde_json::from_str(&json).unwrap();
    assert!(scheme_distance(&s, &back).unwrap() < 1e-12);

    // tampering with a stored block is detected
    let mut value: serde_json::Value = serde_json::from_str(&json).unwrap();
    value["blocks"][1][0]["re"][0][0] = serde_json::json!(0.123);
    assert!(serde_json::from_value::<MeasurementScheme>(value).is_err());

    let mut csv = Vec::new();
    scheme_matrix(&s).write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 6);
    let h = scheme_matrix(&s);
    for (i, line) in lines.iter().enumerate() {
        let vals: Vec<f64> = line.split(',').map(|t| t.parse().unwrap()).collect();
        assert_eq!(vals.len(), 4);
        for (j, v) in vals.iter().enumerate() {
            assert_eq!(*v, h.matrix()[(i, j)]);
        }
    }
}

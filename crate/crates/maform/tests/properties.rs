use maform::characterization::{is_ball, is_circular, levi_product, rotational_test, scaling_test, special_frame};
use maform::deformation::{
    extract_from_structure, fourier_modes, gram, operator_norm, reconstruct_structure, BasePoint, DeformationError,
    DeformationTensor, FnTensor, ModeSet, TensorGrid,
};
use maform::domain_model::MinkowskiField;
use maform::C64;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn c64() -> impl Strategy<Value = C64> {
    (-1.0..1.0f64, -1.0..1.0f64).prop_map(|(a, b)| C64::new(a, b))
}

fn matrix(d: usize, scale: f64) -> impl Strategy<Value = DMatrix<C64>> {
    prop::collection::vec(c64(), d * d).prop_map(move |xs| DMatrix::from_vec(d, d, xs) * C64::new(scale, 0.0))
}

/// Mode sets on two base points of ℂP^{n−1}, modes `0..=k_max`, with the
/// higher modes scaled by `higher`.
fn mode_set(n: usize, k_max: usize, higher: f64) -> impl Strategy<Value = ModeSet> {
    let d = n - 1;
    prop::collection::vec(prop::collection::vec(matrix(d, 0.3), 2), k_max + 1).prop_map(move |mut modes| {
        for m in modes.iter_mut().skip(1).flatten() {
            *m *= C64::new(higher, 0.0);
        }
        let bases = vec![
            BasePoint { chart: 0, v: vec![C64::new(0.1, 0.2); d] },
            BasePoint { chart: 1, v: vec![C64::new(-0.3, 0.4); d] },
        ];
        ModeSet::from_modes(n, bases, modes)
    })
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-14 * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn contractions_compose(m in mode_set(3, 4, 1.0), k1 in 0.05..0.95f64, k2 in 0.05..0.95f64) {
        let twice = m.contract(k1).contract(k2);
        let once = m.contract(k1 * k2);
        for (a, b) in twice.modes.iter().flatten().zip(once.modes.iter().flatten()) {
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!(close(x.re, y.re) && close(x.im, y.im), "{x} {y}");
            }
        }
    }

    #[test]
    fn rotation_keeps_the_largest_mode(m in mode_set(2, 5, 1.0), theta in 0.0..std::f64::consts::TAU) {
        let before = m.norms();
        let after = m.rotate(theta).norms();
        let argmax = |v: &[f64]| (0..v.len()).max_by(|&i, &j| v[i].total_cmp(&v[j])).unwrap();
        for (a, b) in before.iter().zip(&after) {
            prop_assert!(close(*a, *b));
        }
        prop_assert_eq!(argmax(&before), argmax(&after));
    }

    #[test]
    fn rotation_verdict_is_circularity(
        m in mode_set(3, 3, 1.0),
        circular in any::<bool>(),
        theta in 0.1..3.0f64,
    ) {
        let m = if circular { m.contract(0.0) } else { m };
        let tol = 1e-9;
        // Resonant angles are rejected by the test itself.
        if let Ok(r) = rotational_test(&m, theta, tol) {
            prop_assert_eq!(r.invariant.pass(), is_circular(&m, tol).pass());
        }
    }

    #[test]
    fn verdicts_are_monotone_in_tolerance(m in mode_set(2, 3, 1e-4), t in 1e-8..1e-2f64, f in 1.0..100.0f64) {
        prop_assert!(!is_circular(&m, t).pass() || is_circular(&m, t * f).pass());
        prop_assert!(!is_ball(&m, t).pass() || is_ball(&m, t * f).pass());
        let (a, b) = (rotational_test(&m, 1.0, t).unwrap(), rotational_test(&m, 1.0, t * f).unwrap());
        prop_assert!(!a.invariant.pass() || b.invariant.pass());
    }

    #[test]
    fn scaling_limit_is_mode_zero(m in mode_set(3, 4, 0.5), k in 0.1..0.9f64) {
        let t = scaling_test(&m, k, 12, 1e-6).unwrap();
        prop_assert_eq!(t.mode0_drift, 0.0);
        let bound: f64 = (1..=4).map(|j| m.norm(j) * k.powi(12 * j as i32)).sum();
        prop_assert!(t.final_distance <= bound * (1.0 + 1e-12));
    }

    #[test]
    fn reconstruction_needs_a_contraction(
        phi in matrix(2, 1.5),
        v in prop::collection::vec(c64(), 2),
        zeta in c64(),
        chart in 0..3usize,
    ) {
        prop_assume!(zeta.norm() > 0.1);
        let norm = operator_norm(&phi, &gram(chart, &v, zeta));
        prop_assume!((norm - 1.0).abs() > 1e-6);
        match reconstruct_structure(&phi, chart, &v, zeta) {
            Ok(j) => {
                prop_assert!(norm < 1.0);
                let back = extract_from_structure(&j, chart, &v, zeta).unwrap();
                let err = (&back.phi - &phi).iter().map(|c| c.norm()).fold(0.0, f64::max);
                prop_assert!(err < 1e-8 / (1.0 - norm), "{err} at norm {norm}");
            }
            Err(DeformationError::NotContracting { .. }) => prop_assert!(norm > 1.0),
            Err(e) => prop_assert!(false, "{e}"),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn band_limited_tensors_split_exactly(c in prop::collection::vec(c64(), 4)) {
        // Modes agree across radii and the series reproduces the samples.
        let field = FnTensor {
            n: 2,
            f: move |_: usize, v: &[C64], z: C64| {
                let s = c[0] * 0.1 + c[1] * 0.1 * v[0] * z + c[2] * 0.05 * v[0].conj() * z * z + c[3] * 0.02 * z.powi(3);
                DMatrix::from_element(1, 1, s)
            },
        };
        let grid = TensorGrid::lattice(2, &[0, 1], 3, vec![0.3, 0.5, 0.7], 8);
        let t = DeformationTensor::sample(&field, &grid).unwrap();
        let m = fourier_modes(&t, 3, 1e-12).unwrap();
        prop_assert!(m.tail < 1e-13 && m.radial_deviation < 1e-12, "{} {}", m.tail, m.radial_deviation);
    }

    #[test]
    fn chart_transitions_are_homogeneous(v in c64(), eps in 0.0..0.08f64, q in prop::array::uniform3(-1.0..1.0f64)) {
        prop_assume!(v.norm() > 0.05);
        for mu in [MinkowskiField::ellipsoid(vec![1.0, 4.0]), MinkowskiField::perturbed_ball(2, eps, q)] {
            let lhs = mu.m(1, &[v.inv()]);
            let rhs = mu.m(0, &[v]) / v.norm();
            prop_assert!((lhs - rhs).abs() < 1e-12 * rhs, "{lhs} {rhs}");
        }
    }
}

/// On `κ² = Σ aᵢ|zᵢ|²` the Levi matrix is `diag(a)` and `∂κ² = (aᵢz̄ᵢ)`.
fn check_frame(a: &[f64], dir: &[C64]) -> Result<(), TestCaseError> {
    let kappa2 = |z: &[C64]| z.iter().zip(a).map(|(c, w)| w * c.norm_sqr()).sum::<f64>();
    let f = special_frame(&kappa2, dir).unwrap();
    let l = DMatrix::from_fn(a.len(), a.len(), |i, j| C64::new(if i == j { a[i] } else { 0.0 }, 0.0));
    prop_assert!((f.kappa_e0 - 1.0).abs() < 1e-12);
    prop_assert_eq!(f.e.len(), a.len() - 1);
    for (i, u) in f.e.iter().enumerate() {
        let grad: C64 = u.iter().zip(&f.e0).zip(a).map(|((x, z), w)| x * z.conj() * *w).sum();
        prop_assert!(grad.norm() < 1e-9, "tangency {grad}");
        for (j, w) in f.e.iter().enumerate() {
            let p = levi_product(&l, u, w);
            let expect = if i == j { 1.0 } else { 0.0 };
            prop_assert!((p - expect).norm() < 1e-6, "({i},{j}) {p}");
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn special_frames_are_unitary(dir in prop::collection::vec(c64(), 3)) {
        prop_assume!(dir.iter().map(|c| c.norm_sqr()).sum::<f64>() > 0.05);
        check_frame(&[1.0, 1.0, 1.0], &dir)?;
        check_frame(&[1.0, 4.0, 2.0], &dir)?;
        check_frame(&[1.0, 4.0], &dir[..2])?;
    }
}

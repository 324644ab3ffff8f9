use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use lantk::dataset::{self, Dataset};
use lantk::elasticity::{self, SimilarityGrid};
use lantk::hoeffding::{self, LabelLaw};
use lantk::hr::{self, KrModel, PairTarget, Variant};
use lantk::kernel::{KernelMatrix, Provenance};
use lantk::kernels_analytic::{expected_k2, expected_k2_matrix, reduce_to_4d};
use lantk::matfile;
use lantk::nth;
use lantk::regress::{self, KernelRegressor};
use lantk::LantkError;

fn points(n: usize, d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0f64..2.0, n * d)
        .prop_filter("rows must be non-zero", move |v| {
            v.chunks(d).all(|r| r.iter().map(|x| x * x).sum::<f64>() > 1e-3)
        })
        .prop_map(move |v| DMatrix::from_row_slice(n, d, &v))
}

fn spd(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, n * n).prop_map(move |v| {
        let a = DMatrix::from_row_slice(n, n, &v);
        &a * a.transpose() + DMatrix::identity(n, n) * 0.2
    })
}

fn signs(n: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(any::<bool>(), n)
        .prop_map(|b| DVector::from_iterator(b.len(), b.into_iter().map(|s| if s { 1.0 } else { -1.0 })))
}

fn grid(k: DMatrix<f64>) -> SimilarityGrid {
    SimilarityGrid::square(&KernelMatrix::new(k, Provenance::new("prop", serde_json::Value::Null))).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn k2_matrix_is_symmetric_psd(x in points(7, 4)) {
        let k = expected_k2_matrix(&x).unwrap().values;
        prop_assert_eq!(&k, &k.transpose());
        let min = k.clone().symmetric_eigen().eigenvalues.min();
        prop_assert!(min >= -1e-10 * k.trace(), "min eigenvalue {}", min);
        for i in 0..7 {
            let r = x.row(i);
            prop_assert!((k[(i, i)] - r.norm_squared()).abs() <= 1e-12 * r.norm_squared());
        }
    }

    #[test]
    fn k2_is_positively_homogeneous(x in points(2, 5), c in 0.1f64..10.0) {
        let (a, b): (Vec<f64>, Vec<f64>) = (x.row(0).iter().copied().collect(), x.row(1).iter().copied().collect());
        let scaled: Vec<f64> = a.iter().map(|v| v * c).collect();
        let base = expected_k2(&a, &b).unwrap();
        let s = expected_k2(&scaled, &b).unwrap();
        prop_assert!((s - c * base).abs() <= 1e-12 * (1.0 + (c * base).abs()));
    }

    #[test]
    fn reduction_preserves_cosines(x in points(4, 6)) {
        let rows: Vec<Vec<f64>> = (0..4).map(|i| x.row(i).iter().copied().collect()).collect();
        if let Ok(r) = reduce_to_4d([&rows[0][..], &rows[1][..], &rows[2][..], &rows[3][..]]) {
            let g = r.v * r.v.transpose();
            for i in 0..4 {
                for j in 0..4 {
                    let (a, b) = (x.row(i), x.row(j));
                    let cos = a.dot(&b) / (a.norm() * b.norm());
                    prop_assert!((g[(i, j)] - cos).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn fwht_twice_scales_by_length(log in 0u32..9, seed in any::<u64>()) {
        let n = 1usize << log;
        let v: Vec<f64> = (0..n).map(|i| ((seed.wrapping_mul(i as u64 + 1) % 1000) as f64) / 500.0 - 1.0).collect();
        let mut w = v.clone();
        hr::fwht(&mut w).unwrap();
        hr::fwht(&mut w).unwrap();
        for (a, b) in w.iter().zip(&v) {
            prop_assert!((a / n as f64 - b).abs() < 1e-12);
        }
    }

    #[test]
    fn psi_weights_sum_to_one_and_match_moment_form(x in points(6, 3), y in signs(6), probe in points(2, 3)) {
        let phi = expected_k2_matrix(&x).unwrap().values;
        let phi_ab = expected_k2(probe.row(0).transpose().as_slice(), probe.row(1).transpose().as_slice()).unwrap();
        let psi = hr::psi_weights(&phi, phi_ab).unwrap();
        prop_assert!((psi.sum() - 1.0).abs() < 1e-10);
        let explicit = y.dot(&(&psi * &y));
        let kr = KrModel::fit(&phi, &PairTarget::Binary(y.clone()), Variant::V1, nth::DEFAULT_FLOOR).unwrap();
        let moment = kr.score(phi_ab).unwrap();
        prop_assert!((explicit - moment).abs() < 1e-9 * (1.0 + explicit.abs()));
    }

    #[test]
    fn clipping_stays_in_range(raw in -1e6f64..1e6, multiclass in any::<bool>()) {
        let range = if multiclass { (0.0, 1.0) } else { (-1.0, 1.0) };
        let z = hr::clip_z(raw, range);
        prop_assert!(z >= range.0 && z <= range.1);
        if raw >= range.0 && raw <= range.1 {
            prop_assert_eq!(z, raw);
        }
    }

    #[test]
    fn relative_ratio_is_scale_invariant(h in spd(6), c in 0.01f64..100.0) {
        let pairs = dataset::enumerate_pairs(&[0, 1, 0, 1, 1, 0], usize::MAX, 0).unwrap();
        let a = elasticity::relative_ratio(&grid(h.clone()), &pairs);
        let b = elasticity::relative_ratio(&grid(h * c), &pairs);
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert!((a.rr - b.rr).abs() < 1e-12 * (1.0 + a.rr.abs())),
            (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
        }
    }

    #[test]
    fn hoeffding_reconstructs_any_function(
        n in 1usize..5,
        seed in any::<u64>(),
        p in prop::collection::vec(0.05f64..0.95, 4),
    ) {
        let f: Vec<f64> = (0..1usize << n).map(|k| (((seed ^ k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 40) as f64) / 1e7 - 0.8).collect();
        let law = LabelLaw::product(p[..n].to_vec()).unwrap();
        let dec = hoeffding::decompose(&f, &law).unwrap();
        let rep = hoeffding::verify(&f, &law, &dec);
        prop_assert!(rep.passes(1e-10), "{:?}", rep);
        let full = dec.truncate(n);
        for (a, b) in full.iter().zip(&f) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn flow_interpolates_between_start_and_targets(h in spd(4), y in signs(4), t in 0.0f64..50.0) {
        let h0 = DVector::from_row_slice(&[0.3, -0.2, 0.1, 0.0]);
        let ht = nth::flow_solution(&h, &y, &h0, t).unwrap();
        // Distance to the targets never grows along the flow.
        prop_assert!((&ht - &y).norm() <= (&h0 - &y).norm() + 1e-12);
        let limit = nth::flow_solution(&h, &y, &h0, f64::INFINITY).unwrap();
        prop_assert!((limit - &y).amax() < 1e-9);
    }

    #[test]
    fn prop1_starts_at_k2(h in spd(3), y in signs(3), k2 in -1.0f64..1.0) {
        let k3 = DVector::from_row_slice(&[0.1, -0.4, 0.2]);
        let k4 = DMatrix::from_row_slice(3, 3, &[0.3, 0.1, 0.0, -0.2, 0.5, 0.1, 0.0, 0.2, -0.1]);
        prop_assert_eq!(nth::prop1_kernel(k2, &k3, &k4, &h, &y, 0.0, nth::DEFAULT_FLOOR).unwrap(), k2);
    }

    #[test]
    fn predictions_survive_joint_rescaling(h in spd(5), y in signs(5), c in 0.01f64..100.0, ridge in 1e-4f64..1.0) {
        let cross = h.rows(0, 3).into_owned();
        let a = KernelRegressor::fit_binary(&h, &y, Some(ridge)).unwrap();
        let b = KernelRegressor::fit_binary(&(&h * c), &y, Some(ridge * c)).unwrap();
        let pa = a.predict(&cross).unwrap();
        let pb = b.predict(&(&cross * c)).unwrap();
        prop_assert!((&pa - &pb).amax() < 1e-8 * (1.0 + pa.amax()));
        prop_assert_eq!(regress::sign_labels(&pa), regress::sign_labels(&pb));
        // (K + ridge I) α = y
        let resid = (&h + DMatrix::identity(5, 5) * ridge) * &a.alpha - DMatrix::from_column_slice(5, 1, y.as_slice());
        prop_assert!(resid.amax() < 1e-8 * y.norm());
    }

    #[test]
    fn pair_buckets_partition_all_pairs(labels in prop::collection::vec(0usize..3, 2..20)) {
        let n = labels.len();
        let intra_exists = (0..n).any(|i| (i + 1..n).any(|j| labels[i] == labels[j]));
        let inter_exists = labels.iter().any(|&l| l != labels[0]);
        let p = match dataset::enumerate_pairs(&labels, usize::MAX, 1) {
            Ok(p) => p,
            Err(LantkError::EmptyBucket(_)) => {
                prop_assert!(!intra_exists || !inter_exists);
                return Ok(());
            }
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        prop_assert_eq!(p.intra.len() + p.inter.len(), n * (n - 1) / 2);
        prop_assert!(p.intra.iter().all(|&(i, j)| i < j && labels[i] == labels[j]));
        prop_assert!(p.inter.iter().all(|&(i, j)| i < j && labels[i] != labels[j]));
    }

    #[test]
    fn balanced_subsample_is_uniform(per_class in 1usize..6, seed in any::<u64>()) {
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let x = DMatrix::from_fn(30, 2, |i, j| (i * 2 + j) as f64);
        let ds = Dataset::new(x, labels, 3).unwrap();
        let s = dataset::balanced_subsample(&ds, per_class, seed).unwrap();
        prop_assert_eq!(s.class_counts(), vec![per_class; 3]);
        prop_assert_eq!(&s, &dataset::balanced_subsample(&ds, per_class, seed).unwrap());
    }

    #[test]
    fn lantkmat_roundtrip(rows in 0usize..6, cols in 0usize..6, seed in any::<u64>()) {
        let m = DMatrix::from_fn(rows, cols, |i, j| f64::from_bits(seed.rotate_left((i * 7 + j) as u32) >> 2));
        let mut buf = Vec::new();
        matfile::write_matrix_to(&mut buf, &m).unwrap();
        prop_assert_eq!(&buf[..8], b"LANTKMAT");
        prop_assert_eq!(buf.len(), 16 + 8 * rows * cols);
        let back = matfile::read_matrix_from(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(back.shape(), m.shape());
        prop_assert!(back.iter().zip(m.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

use gotl::data::Dataset;
use gotl::regress::{fit_batch_linear, DEFAULT_RIDGE};
use gotl::sim::ScenarioConfig;
use gotl::tca::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn blobs(seed: u64, sizes: &[usize], dim: usize, shift: f64) -> Vec<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sizes
        .iter()
        .enumerate()
        .map(|(d, &n)| {
            (0..n)
                .map(|_| {
                    (0..dim)
                        .map(|c| {
                            let spread = 1.0 + c as f64 * 0.3;
                            rng.random_range(-spread..spread)
                                + if c == 0 { shift * d as f64 } else { 0.0 }
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn stack(domains: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    domains.iter().flatten().cloned().collect()
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

/// Cosines of the principal angles between the column spaces of `a` and `b`.
fn principal_cosines(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    let qa = a.clone().qr().q();
    let qb = b.clone().qr().q();
    let mut s: Vec<f64> = (qa.transpose() * qb)
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    s.sort_by(f64::total_cmp);
    s
}

#[test]
fn linear_gram_example() {
    let k = gram_matrix(
        &[vec![1.0, 0.0], vec![0.0, 2.0], vec![1.0, 1.0]],
        Kernel::Linear,
    )
    .unwrap();
    assert_eq!(
        k,
        DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 1.0, 0.0, 4.0, 2.0, 1.0, 2.0, 2.0])
    );
    let r = gram_matrix(&[vec![0.0], vec![1.0]], Kernel::Rbf { gamma: 0.5 }).unwrap();
    assert!((r[(0, 1)] - (-0.5f64).exp()).abs() < 1e-15);
    assert!(gram_matrix(&[vec![0.0], vec![1.0, 2.0]], Kernel::Linear).is_err());
}

#[test]
fn l_matrix_two_by_two() {
    let l = build_l(&DomainLayout::new(vec![2, 2]).unwrap());
    let q = 1.0 / 64.0;
    let expected = DMatrix::from_row_slice(
        4,
        4,
        &[q, q, -q, -q, q, q, -q, -q, -q, -q, q, q, -q, -q, q, q],
    );
    assert!((l - expected).abs().max() < 1e-15);
}

#[test]
fn l_rows_sum_to_zero() {
    for sizes in [vec![3, 5], vec![2, 4, 7], vec![6]] {
        let l = build_l(&DomainLayout::new(sizes).unwrap());
        assert!((&l - l.transpose()).abs().max() == 0.0);
        for r in l.row_iter() {
            assert!(r.sum().abs() < 1e-15);
        }
    }
}

#[test]
fn centering_matrix() {
    let h = build_h(4);
    assert!((h[(0, 0)] - 0.75).abs() < 1e-15 && (h[(0, 1)] + 0.25).abs() < 1e-15);
    assert!((&h * &h - &h).abs().max() < 1e-15);
    assert!((h * DMatrix::from_element(4, 1, 1.0)).abs().max() < 1e-15);
}

#[test]
fn zero_discrepancy_reduces_to_kernel_pca() {
    let pts = stack(&blobs(1, &[20, 20], 4, 0.0));
    let k = gram_matrix(&pts, Kernel::Linear).unwrap();
    let h = build_h(40);
    let sol = solve_tca(&k, &DMatrix::zeros(40, 40), &h, 1.0, 3).unwrap();
    let khk = &k * &h * &k;
    let eig = khk.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..40).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let top = DMatrix::from_fn(40, 3, |r, c| eig.eigenvectors[(r, order[c])]);
    for c in principal_cosines(&sol.w, &top) {
        assert!(c > 1.0 - 1e-8, "cosine {c}");
    }
    for (i, &lam) in sol.eigenvalues.iter().enumerate() {
        assert!((lam - eig.eigenvalues[order[i]]).abs() < 1e-8 * lam.abs().max(1.0));
    }
}

#[test]
fn trace_ratio_equals_eigenvalue_sum() {
    let pts = stack(&blobs(2, &[8, 7], 3, 1.5));
    let layout = DomainLayout::new(vec![8, 7]).unwrap();
    let k = gram_matrix(&pts, Kernel::Linear).unwrap();
    let (l, h) = (build_l(&layout), build_h(15));
    let a = &k * &h * &k;
    let b = &k * &l * &k + DMatrix::identity(15, 15) * 0.5;
    for m in [3, 15] {
        let sol = solve_tca(&k, &l, &h, 0.5, m).unwrap();
        let wbw = sol.w.transpose() * &b * &sol.w;
        let waw = sol.w.transpose() * &a * &sol.w;
        let obj = (wbw.try_inverse().unwrap() * waw).trace();
        let sum: f64 = sol.eigenvalues.iter().sum();
        assert!(
            (obj - sum).abs() < 1e-6 * sum.abs().max(1.0),
            "m {m}: {obj} vs {sum}"
        );
    }
}

#[test]
fn unit_variance_constraint() {
    let pts = stack(&blobs(3, &[15, 15], 4, 2.0));
    let k = gram_matrix(&pts, Kernel::Linear).unwrap();
    let h = build_h(30);
    let sol = solve_tca(
        &k,
        &build_l(&DomainLayout::new(vec![15, 15]).unwrap()),
        &h,
        1.0,
        4,
    )
    .unwrap();
    let c = sol.w.transpose() * &k * &h * &k * &sol.w;
    assert!((c - DMatrix::identity(4, 4)).abs().max() < 1e-8);
}

#[test]
fn squared_mmd_identities() {
    let doms = blobs(4, &[10, 12], 3, 1.0);
    let (a, b) = (&doms[0], &doms[1]);
    assert!(mmd(a, a, Kernel::Linear).unwrap() < 1e-12);
    let ab = mmd(a, b, Kernel::Linear).unwrap();
    assert!((ab - mmd(b, a, Kernel::Linear).unwrap()).abs() < 1e-12);
    let mean = |p: &[Vec<f64>]| {
        (0..3)
            .map(|c| p.iter().map(|x| x[c]).sum::<f64>() / p.len() as f64)
            .collect::<Vec<_>>()
    };
    let (ma, mb) = (mean(a), mean(b));
    let sq: f64 = ma.iter().zip(&mb).map(|(x, y)| (x - y).powi(2)).sum();
    assert!((ab - sq).abs() < 1e-12);
}

#[test]
fn discrepancy_trace_identity() {
    let doms = blobs(5, &[9, 11], 3, 1.2);
    let pts = stack(&doms);
    let n = pts.len() as f64;
    let layout = DomainLayout::new(vec![9, 11]).unwrap();
    let k = gram_matrix(&pts, Kernel::Linear).unwrap();
    let l = build_l(&layout);
    assert!(
        ((&k * &l).trace() * n * n - mmd(&doms[0], &doms[1], Kernel::Linear).unwrap()).abs()
            < 1e-10
    );
    let sol = solve_tca(&k, &l, &build_h(20), 1.0, 2).unwrap();
    let proj = &k * &sol.w;
    let rows: Vec<Vec<f64>> = proj
        .row_iter()
        .map(|r| r.iter().copied().collect())
        .collect();
    let lhs = (sol.w.transpose() * &k * &l * &k * &sol.w).trace() * n * n;
    let rhs = mmd(&rows[..9], &rows[9..], Kernel::Linear).unwrap();
    assert!((lhs - rhs).abs() < 1e-9 * rhs.max(1.0), "{lhs} vs {rhs}");
}

#[test]
fn projection_shrinks_domain_gap() {
    let doms = blobs(6, &[60, 60], 5, 3.0);
    let model = TcaModel::fit(
        &doms,
        &TcaConfig {
            components: 2,
            ..Default::default()
        },
    )
    .unwrap();
    let std = model.standardizer();
    let zs: Vec<Vec<Vec<f64>>> = doms
        .iter()
        .map(|d| d.iter().map(|p| std.apply(p)).collect())
        .collect();
    let raw = mmd(&zs[0], &zs[1], Kernel::Linear).unwrap();
    let proj: Vec<Vec<Vec<f64>>> = doms
        .iter()
        .map(|d| d.iter().map(|p| model.project(p).unwrap()).collect())
        .collect();
    let projected = mmd(&proj[0], &proj[1], Kernel::Linear).unwrap();
    assert!(projected < 0.1 * raw, "{projected} vs {raw}");
}

#[test]
fn projection_routes_agree() {
    let doms = blobs(7, &[25, 30], 4, 1.0);
    let model = TcaModel::fit(
        &doms,
        &TcaConfig {
            components: 3,
            ..Default::default()
        },
    )
    .unwrap();
    let emb = model.embedding();
    for (i, p) in doms.iter().flatten().enumerate() {
        let a = model.project(p).unwrap();
        let b = model.project_by_kernel(p).unwrap();
        for c in 0..3 {
            assert!((a[c] - b[c]).abs() < 1e-9 * a[c].abs().max(1.0));
            assert!((a[c] - emb[(c, i)]).abs() < 1e-9 * a[c].abs().max(1.0));
        }
    }
    assert!(matches!(
        model.project(&[1.0, 2.0]),
        Err(gotl::Error::DimensionMismatch { .. })
    ));
}

#[test]
fn bundle_round_trip() {
    let doms = blobs(8, &[20, 20], 3, 1.0);
    let model = TcaModel::fit(
        &doms,
        &TcaConfig {
            components: 2,
            ..Default::default()
        },
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    model.save_bundle(dir.path()).unwrap();
    let back = TcaModel::load_bundle(dir.path()).unwrap();
    let p = &doms[1][3];
    let (a, b) = (model.project(p).unwrap(), back.project(p).unwrap());
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12 * x.abs().max(1.0));
    }
}

#[test]
fn tie_break_prefers_fewer_components() {
    assert_eq!(pick_components(&COMPONENT_GRID, &[1.0; 6]), 5);
    assert_eq!(
        pick_components(&COMPONENT_GRID, &[2.0, 1.0, 1.0, 3.0, 1.5, 1.0]),
        10
    );
}

#[test]
fn single_domain_full_rank_matches_batch_fit() {
    let sc = ScenarioConfig {
        days: 20,
        ..Default::default()
    };
    let d = sc.simulate("s").unwrap().dataset;
    let (train, test): (Dataset, Dataset) = (d.slice(0..700), d.slice(700..d.len()));
    let batch = fit_batch_linear(&train, 3, DEFAULT_RIDGE).unwrap();
    let cfg = TcaConfig {
        components: 18,
        ..Default::default()
    };
    let tca = fit_multisource_predictor(&[vec![train]], 3, &cfg, DEFAULT_RIDGE).unwrap();
    let lin = tca.to_linear_model().unwrap();
    let r_batch = rollout_rmse(&batch, &test, 3, 12).unwrap();
    let r_tca = rollout_rmse(&lin, &test, 3, 12).unwrap();
    assert!(r_tca <= 1.1 * r_batch, "{r_tca} vs {r_batch}");
}

#[test]
fn invalid_arguments() {
    let k = DMatrix::identity(4, 4);
    let l = build_l(&DomainLayout::new(vec![2, 2]).unwrap());
    let h = build_h(4);
    assert!(solve_tca(&k, &l, &h, 0.0, 2).is_err());
    assert!(solve_tca(&k, &l, &h, 1.0, 5).is_err());
    assert!(solve_tca(&k, &l, &build_h(3), 1.0, 2).is_err());
    assert!(DomainLayout::new(vec![3, 0]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dense_and_primal_span_agree(seed in 0u64..10_000, n1 in 6usize..25, n2 in 6usize..25, m in 1usize..4) {
        let doms = blobs(seed, &[n1, n2], 4, 1.0);
        let pts = stack(&doms);
        let layout = DomainLayout::new(vec![n1, n2]).unwrap();
        let k = gram_matrix(&pts, Kernel::Linear).unwrap();
        let dense = solve_tca(&k, &build_l(&layout), &build_h(n1 + n2), 1.0, m).unwrap();
        let (primal, _) = solve_tca_linear(&to_matrix(&pts), &layout, 1.0, m).unwrap();
        // compare the embedded coordinates K W, which is what projection uses
        let kd = &k * &dense.w;
        let kp = &k * &primal.w;
        for c in principal_cosines(&kd, &kp) {
            prop_assert!(c > 1.0 - 1e-6, "cosine {}", c);
        }
        for (a, b) in dense.eigenvalues.iter().zip(&primal.eigenvalues) {
            prop_assert!((a - b).abs() < 1e-6 * a.abs().max(1.0));
        }
    }

    #[test]
    fn gram_is_positive_semidefinite(seed in 0u64..10_000, n in 2usize..20, gamma in 0.01f64..2.0) {
        let pts = stack(&blobs(seed, &[n], 3, 0.0));
        for kernel in [Kernel::Linear, Kernel::Rbf { gamma }] {
            let k = gram_matrix(&pts, kernel).unwrap();
            let min = k.symmetric_eigen().eigenvalues.min();
            prop_assert!(min > -1e-9);
        }
    }
}

//! Property tests over randomly generated small inputs.

use ndarray::{Array1, Array2, Array3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use specden::containers::{flatten, from_sic_bytes, sparsity, to_sic_bytes, unflatten, DataMatrix, EnergyAxis, SpectrumImage};
use specden::decomposition::{pca_decompose, proximity};
use specden::phantom::add_poisson;
use specden::preprocess::{
    apply_weighting, bin2x2, center, compute_weights, gaussian_filter_spatial, invert_weighting, uncenter, WeightMode,
};
use specden::reconstruct::{reconstruct_weighted, residual_norms};
use specden::truncation::{aniso_hist, aniso_skew, aniso_skew_direct, gavish_donoho_cutoff, nadler_retrievable, nadler_threshold, scatter_grid};

fn cube_strategy(max_side: usize, max_n: usize) -> impl Strategy<Value = SpectrumImage> {
    (1..=max_side, 1..=max_side, 1..=max_n).prop_flat_map(|(r, c, n)| {
        prop::collection::vec(prop_oneof![3 => Just(0.0), 2 => 0.0..50.0f64], r * c * n).prop_map(move |v| {
            let counts = Array3::from_shape_vec((r, c, n), v).unwrap();
            SpectrumImage::new(EnergyAxis::new(0.1, 0.01, n).unwrap(), counts, "prop").unwrap()
        })
    })
}

fn gaussian_matrix(m: usize, n: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((m, n), |_| StandardNormal.sample(&mut rng))
}

fn gaussian_vec(m: usize, seed: u64) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array1::from_shape_fn(m, |_| StandardNormal.sample(&mut rng))
}

fn shuffled_rows(a: &Array2<f64>, seed: u64) -> Array2<f64> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..a.nrows()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Array2::from_shape_fn(a.dim(), |(i, j)| a[[idx[i], j]])
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn flatten_unflatten_roundtrip(cube in cube_strategy(6, 8)) {
        let m = flatten(&cube);
        prop_assert_eq!(m.m(), cube.rows() * cube.cols());
        let back = unflatten(&m, cube.rows(), cube.cols(), *cube.axis()).unwrap();
        prop_assert_eq!(back.counts(), cube.counts());
        for i in 0..m.m() {
            let (r, c) = m.pixel(i);
            prop_assert_eq!(r * cube.cols() + c, i);
        }
    }

    #[test]
    fn container_bytes_roundtrip(cube in cube_strategy(5, 6)) {
        let bytes = to_sic_bytes(&cube);
        let back = from_sic_bytes(&bytes).unwrap();
        prop_assert_eq!(back.counts(), cube.counts());
        prop_assert_eq!(back.axis(), cube.axis());
        prop_assert_eq!(back.provenance(), cube.provenance());
        prop_assert_eq!(to_sic_bytes(&back), bytes);
    }

    #[test]
    fn fill_ignores_layout_and_positive_scale(cube in cube_strategy(6, 6), a in 0.01..100.0f64) {
        let s = sparsity(&flatten(&cube));
        let nz = cube.counts().iter().filter(|&&v| v != 0.0).count() as f64 / cube.counts().len() as f64;
        prop_assert_eq!(s, nz);
        prop_assert_eq!(sparsity(&flatten(&cube.scaled(a))), s);
    }

    #[test]
    fn binning_commutes_with_flatten(cube in cube_strategy(7, 5)) {
        prop_assume!(cube.rows() >= 2 && cube.cols() >= 2);
        let b = bin2x2(&cube).unwrap();
        let (r2, c2) = (cube.rows() / 2, cube.cols() / 2);
        prop_assert_eq!(b.dropped_row, cube.rows() % 2 == 1);
        prop_assert_eq!(b.dropped_col, cube.cols() % 2 == 1);
        let fb = flatten(&b.image);
        let f = flatten(&cube);
        for i in 0..r2 {
            for j in 0..c2 {
                for ch in 0..cube.n_channels() {
                    let want: f64 = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .iter()
                        .map(|(dr, dc)| f.values[[(2 * i + dr) * cube.cols() + 2 * j + dc, ch]])
                        .sum();
                    prop_assert!((fb.values[[i * c2 + j, ch]] - want).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn smoothing_never_empties_cells(cube in cube_strategy(8, 4), sigma in 0.5..2.0f64) {
        let g = gaussian_filter_spatial(&cube, sigma).unwrap();
        prop_assert!(sparsity(&flatten(&g)) >= sparsity(&flatten(&cube)));
        // every output is a convex combination of inputs
        let hi = cube.counts().iter().copied().fold(0.0, f64::max);
        prop_assert!(g.counts().iter().all(|&v| v >= 0.0 && v <= hi * (1.0 + 1e-12)));
    }

    #[test]
    fn weighting_and_centering_invert(cube in cube_strategy(6, 6), full in any::<bool>()) {
        let m = flatten(&cube);
        prop_assume!(m.values.iter().any(|&v| v > 0.0));
        let mode = if full { WeightMode::Full } else { WeightMode::Spectrum };
        let w = compute_weights(&m, mode).unwrap();
        let back = invert_weighting(&apply_weighting(&m, &w).unwrap(), &w).unwrap();
        for i in 0..m.m() {
            for j in 0..m.n() {
                if w.w(i, j) > 0.0 {
                    prop_assert!((back.values[[i, j]] - m.values[[i, j]]).abs() <= 1e-9 * (1.0 + m.values[[i, j]].abs()));
                }
            }
        }
        let (c, model) = center(&m);
        let u = uncenter(&c, &model).unwrap();
        for (a, b) in u.values.iter().zip(m.values.iter()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        for j in 0..m.n() {
            prop_assert!(c.values.column(j).sum().abs() < 1e-8 * (1.0 + m.values.column(j).iter().map(|v| v.abs()).sum::<f64>()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn pca_energy_and_score_identity(m in 4usize..30, n in 2usize..12, seed in any::<u64>()) {
        let (c, _) = center(&DataMatrix::from_values(gaussian_matrix(m, n, seed)));
        let model = pca_decompose(&c).unwrap();
        let energy: f64 = c.values.iter().map(|x| x * x).sum();
        let total: f64 = model.variances.iter().sum::<f64>() * (m - 1) as f64;
        prop_assert!((total - energy).abs() <= 1e-9 * energy.max(1.0));
        let t = c.values.dot(&model.loadings);
        for (a, b) in t.iter().zip(model.scores.iter()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        let ptp = model.loadings.t().dot(&model.loadings);
        for i in 0..model.r() {
            for j in 0..model.r() {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((ptp[[i, j]] - want).abs() < 1e-9);
            }
        }
        for w in model.variances.windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
        // sign: largest-magnitude entry of each loading is positive
        for col in model.loadings.columns() {
            let peak = col.iter().copied().fold(0.0f64, |b, x| if x.abs() > b.abs() { x } else { b });
            prop_assert!(peak >= 0.0);
        }
    }

    #[test]
    fn pca_ignores_pixel_order(m in 6usize..30, n in 2usize..8, seed in any::<u64>()) {
        let a = gaussian_matrix(m, n, seed);
        let b = shuffled_rows(&a, seed ^ 0x5a5a);
        let ma = pca_decompose(&center(&DataMatrix::from_values(a)).0).unwrap();
        let mb = pca_decompose(&center(&DataMatrix::from_values(b)).0).unwrap();
        for (x, y) in ma.variances.iter().zip(mb.variances.iter()) {
            prop_assert!((x - y).abs() <= 1e-9 * ma.variances[0]);
        }
        // loadings agree up to sign wherever the spectrum is non-degenerate
        for k in 0..ma.r() {
            let gap_prev = if k == 0 { f64::INFINITY } else { ma.variances[k - 1] - ma.variances[k] };
            let gap_next = if k + 1 < ma.r() { ma.variances[k] - ma.variances[k + 1] } else { f64::INFINITY };
            if gap_prev.min(gap_next) > 1e-3 * ma.variances[0] {
                let phi = proximity(&mb, &ma, k).unwrap();
                prop_assert!((phi.phi[k] - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn residuals_shrink_and_full_rank_is_exact(m in 4usize..25, n in 2usize..10, seed in any::<u64>()) {
        let raw = gaussian_matrix(m, n, seed);
        let (c, cm) = center(&DataMatrix::from_values(raw.clone()));
        let mut model = pca_decompose(&c).unwrap();
        model.center = cm;
        let norms = residual_norms(&model, raw.view(), model.r()).unwrap();
        for w in norms.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9);
        }
        prop_assert!(*norms.last().unwrap() < 1e-8 * norms[0].max(1.0));
        let full = reconstruct_weighted(&model, model.r()).unwrap();
        for (a, b) in full.iter().zip(raw.iter()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn completeness_of_proximity(m in 12usize..30, n in 2usize..8, seed in any::<u64>(), k in 0usize..2) {
        let a = pca_decompose(&center(&DataMatrix::from_values(gaussian_matrix(m, n, seed))).0).unwrap();
        let b = pca_decompose(&center(&DataMatrix::from_values(gaussian_matrix(m, n, seed + 1))).0).unwrap();
        let p = proximity(&a, &b, k.min(n - 1)).unwrap();
        prop_assert!(p.complete);
        prop_assert!((p.sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn histogram_statistic_ignores_pixel_order(seed in any::<u64>()) {
        let (a, b) = (gaussian_vec(400, seed), gaussian_vec(400, seed + 7));
        let pair = ndarray::stack![ndarray::Axis(1), a, b];
        let shuffled = shuffled_rows(&pair, seed);
        let x = aniso_hist(pair.column(0), pair.column(1), 16, 32).unwrap();
        let y = aniso_hist(shuffled.column(0), shuffled.column(1), 16, 32).unwrap();
        prop_assert!((x - y).abs() < 1e-12);
    }

    #[test]
    fn scatter_grid_holds_every_point(m in 10usize..300, t in 2usize..40, seed in any::<u64>()) {
        let g = scatter_grid(gaussian_vec(m, seed).view(), gaussian_vec(m, seed + 1).view(), t).unwrap();
        prop_assert_eq!(g.total(), m as u64);
    }

    #[test]
    fn fast_skew_matches_double_sum(m in 3usize..40, seed in any::<u64>()) {
        let (a, b) = (gaussian_vec(m, seed), gaussian_vec(m, seed + 3));
        if let (Some(x), Some(y)) = (aniso_skew(a.view(), b.view()), aniso_skew_direct(a.view(), b.view())) {
            prop_assert!((x - y).abs() <= 1e-8 * y.abs().max(1.0));
        }
    }

    #[test]
    fn hard_threshold_cutoff_falls_with_noise(
        mut lams in prop::collection::vec(0.0..10.0f64, 1..40),
        s1 in 0.01..5.0f64,
        s2 in 0.01..5.0f64,
        m in 10usize..5000,
        n in 10usize..5000,
    ) {
        lams.sort_by(|a, b| b.total_cmp(a));
        let (lo, hi) = if s1 < s2 { (s1, s2) } else { (s2, s1) };
        prop_assert!(gavish_donoho_cutoff(&lams, hi, m, n) <= gavish_donoho_cutoff(&lams, lo, m, n));
    }

    #[test]
    fn retrievability_boundary(m in 10usize..100_000, n in 10usize..5000, sigma2 in 0.01..10.0f64) {
        let lam = nadler_threshold(m, n) * sigma2;
        prop_assert!(nadler_retrievable(lam * (1.0 + 1e-9), sigma2, m, n));
        prop_assert!(!nadler_retrievable(lam * (1.0 - 1e-9), sigma2, m, n));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, ..ProptestConfig::default() })]

    #[test]
    fn poisson_draws_do_not_depend_on_thread_count(seed in any::<u64>()) {
        let counts = Array3::from_shape_fn((9, 7, 11), |(r, c, j)| ((r + 2 * c + 3 * j) % 13) as f64 * 0.7);
        let cube = SpectrumImage::new(EnergyAxis::new(0.0, 0.1, 11).unwrap(), counts, "").unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| add_poisson(&cube, seed).unwrap());
        let b = four.install(|| add_poisson(&cube, seed).unwrap());
        prop_assert_eq!(a.counts(), b.counts());
        prop_assert!(a.counts().iter().all(|&v| v >= 0.0 && v.fract() == 0.0));
    }

    #[test]
    fn swapping_couple_order_keeps_hist_close(seed in any::<u64>()) {
        // elongated cloud: the statistic is far from zero and should barely move
        let a = gaussian_vec(4000, seed);
        let b = gaussian_vec(4000, seed + 1).mapv(|v| 0.2 * v) + &a.mapv(|v| 0.9 * v);
        let x = aniso_hist(a.view(), b.view(), 16, 128).unwrap();
        let y = aniso_hist(b.view(), a.view(), 16, 128).unwrap();
        prop_assert!((x - y).abs() <= 0.2 * x.abs(), "{x} vs {y}");
    }

    #[test]
    fn rotating_the_cloud_keeps_hist_close(seed in any::<u64>(), theta in 0.0..std::f64::consts::PI) {
        // three clusters: strongly non-round, independent of orientation
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centres = [(3.0, 0.0), (-1.5, 2.6), (-1.5, -2.6)];
        let pts: Vec<(f64, f64)> = (0..6000)
            .map(|i| {
                let (cx, cy) = centres[i % 3];
                let dx: f64 = StandardNormal.sample(&mut rng);
                let dy: f64 = StandardNormal.sample(&mut rng);
                (cx + 0.5 * dx, cy + 0.5 * dy)
            })
            .collect();
        let (c, s) = (theta.cos(), theta.sin());
        let a = Array1::from_iter(pts.iter().map(|p| p.0));
        let b = Array1::from_iter(pts.iter().map(|p| p.1));
        let ra = Array1::from_iter(pts.iter().map(|p| c * p.0 - s * p.1));
        let rb = Array1::from_iter(pts.iter().map(|p| s * p.0 + c * p.1));
        let x = aniso_hist(a.view(), b.view(), 64, 128).unwrap();
        let y = aniso_hist(ra.view(), rb.view(), 64, 128).unwrap();
        prop_assert!((x - y).abs() <= 0.2 * x.abs(), "{x} vs {y}");
    }
}

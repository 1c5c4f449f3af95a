use hdsparse::bench::{simulate, OutcomeKind, SignalLayout, SimSpec};
use hdsparse::data::{FeatureMatrix, ResponseVector};
use hdsparse::mi::{
    bin_count, fft_kde_1d, fft_kde_2d, mi_binning, mi_fftkde, mi_knn, pearson_abs, screen_all, selection_auroc,
    silverman_bandwidth, Grid2D, KdeOptions, KernelKind, MiMethod, ScreenOptions,
};
use ndarray::{Array1, Array2, ArrayView1};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normals(seed: u64, n: usize) -> Array1<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Array1::from_shape_fn(n, |_| r.sample(StandardNormal))
}

fn correlated(seed: u64, n: usize, rho: f64) -> (Array1<f64>, Array1<f64>) {
    let x = normals(seed, n);
    let z = normals(seed + 1, n);
    let y = &x * rho + &z * (1.0 - rho * rho).sqrt();
    (x, y)
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - f) + sorted[i + 1] * f
    } else {
        sorted[i]
    }
}

#[test]
fn silverman_matches_formula() {
    let x = normals(1, 1000);
    let n = x.len() as f64;
    let mean = x.mean().unwrap();
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let iqr = quantile(&s, 0.75) - quantile(&s, 0.25);
    let want = 0.9 * sd.min(iqr / 1.34) * n.powf(-0.2);
    assert!((silverman_bandwidth(x.view()).unwrap() - want).abs() < 1e-12);
    let scaled = silverman_bandwidth((&x * 3.0).view()).unwrap();
    assert!((scaled - 3.0 * want).abs() < 1e-12);
}

#[test]
fn silverman_rejects_degenerate_input() {
    assert!(silverman_bandwidth(Array1::from(vec![1.0]).view()).is_err());
    assert!(silverman_bandwidth(Array1::from(vec![2.0; 20]).view()).is_err());
}

#[test]
fn kde_grid_integrates_to_one() {
    let (x, y) = correlated(3, 10_000, 0.0);
    let h = 0.2;
    let grid = Grid2D::covering(x.view(), y.view(), h, h, 256, 256).unwrap();
    let p = fft_kde_2d(x.view(), y.view(), KernelKind::Gaussian, h, h, &grid).unwrap();
    assert!(p.iter().all(|&v| v >= 0.0));
    let total = p.sum() * grid.dx() * grid.dy();
    assert!((total - 1.0).abs() <= 1e-3);
    let px = p.sum_axis(ndarray::Axis(1)) * grid.dy();
    assert!((px.sum() * grid.dx() - 1.0).abs() <= 1e-3);
}

#[test]
fn kde_matches_direct_summation() {
    let grid = Grid2D::new(-4.0, 4.0, -4.0, 4.0, 64, 64).unwrap();
    let (dx, dy) = (grid.dx(), grid.dy());
    // points on grid nodes so binning is exact
    let pts = [(20usize, 31usize), (31, 31), (40, 25), (33, 44)];
    let x = Array1::from_iter(pts.iter().map(|&(i, _)| grid.x_min + i as f64 * dx));
    let y = Array1::from_iter(pts.iter().map(|&(_, j)| grid.y_min + j as f64 * dy));
    let (hx, hy) = (0.4, 0.3);
    let p = fft_kde_2d(x.view(), y.view(), KernelKind::Gaussian, hx, hy, &grid).unwrap();
    let k = KernelKind::Gaussian;
    let mut direct = Array2::<f64>::zeros((64, 64));
    for ((i, j), v) in direct.indexed_iter_mut() {
        let (gx, gy) = (grid.x_min + i as f64 * dx, grid.y_min + j as f64 * dy);
        *v = x.iter().zip(y.iter()).map(|(&a, &b)| k.eval(gx - a, hx) * k.eval(gy - b, hy)).sum::<f64>() / 4.0;
    }
    let z = direct.sum() * dx * dy;
    direct /= z;
    let dev = (&p - &direct).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    assert!(dev <= 1e-6, "max deviation {dev:e}");
}

#[test]
fn kde_swap_gives_transpose() {
    let (x, y) = correlated(5, 500, 0.6);
    let grid = Grid2D::covering(x.view(), y.view(), 0.3, 0.25, 128, 64).unwrap();
    let a = fft_kde_2d(x.view(), y.view(), KernelKind::Epanechnikov, 0.3, 0.25, &grid).unwrap();
    let b = fft_kde_2d(y.view(), x.view(), KernelKind::Epanechnikov, 0.25, 0.3, &grid.transposed()).unwrap();
    let dev = (&a - &b.t()).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    assert!(dev <= 1e-12);
}

#[test]
fn kde_rejects_uncovered_grid() {
    let (x, y) = correlated(6, 100, 0.0);
    let grid = Grid2D::new(-1.0, 1.0, -1.0, 1.0, 64, 64).unwrap();
    assert!(fft_kde_2d(x.view(), y.view(), KernelKind::Gaussian, 0.2, 0.2, &grid).is_err());
    assert!(Grid2D::new(0.0, 1.0, 0.0, 1.0, 100, 64).is_err());
    assert!(Grid2D::new(1.0, 0.0, 0.0, 1.0, 64, 64).is_err());
}

#[test]
fn kde_1d_normalized() {
    let x = normals(7, 2000);
    let (nodes, d) = fft_kde_1d(x.view(), KernelKind::Epanechnikov, 0.25, 1024).unwrap();
    let step = nodes[1] - nodes[0];
    assert!((d.sum() * step - 1.0).abs() < 1e-12);
}

#[test]
fn fftkde_independence_and_identity() {
    let x = normals(8, 10_000);
    let z = normals(9, 10_000);
    let o = KdeOptions::default();
    assert!(mi_fftkde(x.view(), z.view(), &o).unwrap().value <= 0.01);
    let x = normals(10, 1000);
    assert!(mi_fftkde(x.view(), x.view(), &o).unwrap().value > 1.0);
}

#[test]
fn fftkde_gaussian_closed_form() {
    let (x, y) = correlated(11, 10_000, 0.5);
    let v = mi_fftkde(x.view(), y.view(), &KdeOptions::default()).unwrap();
    let truth = -0.5 * (1.0f64 - 0.25).ln();
    assert!((v.value - truth).abs() <= 0.03, "{} vs {truth}", v.value);
    assert!(v.diagnostics.bandwidths.is_some());
}

#[test]
fn fftkde_symmetric() {
    let (x, y) = correlated(12, 800, 0.4);
    let o = KdeOptions::default();
    let a = mi_fftkde(x.view(), y.view(), &o).unwrap().value;
    let b = mi_fftkde(y.view(), x.view(), &o).unwrap().value;
    assert!((a - b).abs() <= 1e-9);
}

fn brute_bin_count(x: ArrayView1<f64>) -> usize {
    let n = x.len() as f64;
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let dmax = (n / n.ln()).ceil() as usize;
    let mut best = (0, f64::NEG_INFINITY);
    for d in 2..=dmax {
        let mut c = vec![0.0; d];
        for &v in x.iter() {
            let b = (((v - lo) / (hi - lo)) * d as f64).floor() as usize;
            c[b.min(d - 1)] += 1.0;
        }
        let df = d as f64;
        let ll: f64 = c.iter().filter(|&&v| v > 0.0).map(|&v| v * (df * v / n).ln()).sum();
        let s = ll - (df - 1.0 + df.ln().powf(2.5));
        if s > best.1 {
            best = (d, s);
        }
    }
    best.0
}

#[test]
fn bin_count_matches_scan() {
    let mut r = ChaCha8Rng::seed_from_u64(13);
    let u = Array1::from_shape_fn(1000, |_| r.gen::<f64>());
    let d = bin_count(u.view()).unwrap();
    assert_eq!(d, brute_bin_count(u.view()));
    assert!(d >= 2 && d <= (1000f64 / 1000f64.ln()).ceil() as usize);
    assert_eq!(bin_count((&u * 4.0 + 7.0).view()).unwrap(), d);
    let small = Array1::from(vec![0.1, 0.5, 0.2, 0.9, 0.3, 0.8, 0.7, 0.4, 0.6, 0.05]);
    assert!(bin_count(small.view()).unwrap() >= 2);
    assert_eq!(bin_count(Array1::from(vec![3.0; 12]).view()).unwrap(), 1);
}

#[test]
fn binning_discrete_independence() {
    let mut r = ChaCha8Rng::seed_from_u64(14);
    let x = Array1::from_shape_fn(10_000, |_| r.gen_range(0..4) as f64);
    let y = Array1::from_shape_fn(10_000, |_| r.gen_range(0..4) as f64);
    assert!(mi_binning(x.view(), y.view()).unwrap().value <= 0.02);
}

#[test]
fn binning_identity_is_entropy() {
    let x = normals(15, 500);
    let d = bin_count(x.view()).unwrap();
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let mut c = vec![0.0_f64; d];
    for &v in x.iter() {
        c[((((v - lo) / (hi - lo)) * d as f64).floor() as usize).min(d - 1)] += 1.0;
    }
    let h: f64 = c.iter().filter(|&&v| v > 0.0).map(|&v| -(v / 500.0) * (v / 500.0).ln()).sum();
    assert!((mi_binning(x.view(), x.view()).unwrap().value - h).abs() < 1e-12);
}

#[test]
fn binning_row_permutation_invariant() {
    let (x, y) = correlated(16, 300, 0.5);
    let perm: Vec<usize> = (0..300).map(|i| (i * 7) % 300).collect();
    let xp = Array1::from_iter(perm.iter().map(|&i| x[i]));
    let yp = Array1::from_iter(perm.iter().map(|&i| y[i]));
    assert_eq!(mi_binning(x.view(), y.view()).unwrap(), mi_binning(xp.view(), yp.view()).unwrap());
}

#[test]
fn knn_examples() {
    let x = normals(17, 5000);
    let z = normals(18, 5000);
    assert!(mi_knn(x.view(), z.view(), 3).unwrap().diagnostics.raw.unwrap().abs() <= 0.02);
    let (x, y) = correlated(19, 5000, 0.9);
    let v = mi_knn(x.view(), y.view(), 3).unwrap().value;
    assert!((v - (-0.5 * (1.0f64 - 0.81).ln())).abs() <= 0.08);
    let cubed = x.mapv(|t| t * t * t);
    let w = mi_knn(cubed.view(), y.view(), 3).unwrap().value;
    assert!((w - v).abs() <= 0.05);
    assert!(mi_knn(x.slice(ndarray::s![..3]), y.slice(ndarray::s![..3]), 3).is_err());
}

#[test]
fn knn_symmetric_and_handles_ties() {
    let (x, y) = correlated(20, 1000, 0.3);
    let a = mi_knn(x.view(), y.view(), 3).unwrap().value;
    let b = mi_knn(y.view(), x.view(), 3).unwrap().value;
    assert!((a - b).abs() <= 1e-12);
    let rounded = x.mapv(|t| (t * 4.0).round() / 4.0);
    assert!(mi_knn(rounded.view(), y.view(), 3).unwrap().value.is_finite());
}

#[test]
fn pearson_examples() {
    let x = Array1::from(vec![1.0, 2.0, 4.0, 7.0, 11.0]);
    assert!((pearson_abs(x.view(), (&x * 2.0 + 1.0).view()).unwrap().value - 1.0).abs() < 1e-15);
    let a = Array1::from(vec![1.0, -1.0, 1.0, -1.0]);
    let b = Array1::from(vec![1.0, 1.0, -1.0, -1.0]);
    assert_eq!(pearson_abs(a.view(), b.view()).unwrap().value, 0.0);
    let y = Array1::from(vec![2.0, 1.0, 5.0, 4.0, 9.0]);
    let (mx, my) = (5.0, 4.2);
    let sxy: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let want = (sxy / (sxx * syy).sqrt()).abs();
    assert!((pearson_abs(x.view(), y.view()).unwrap().value - want).abs() < 1e-14);
    assert!(pearson_abs(x.view(), Array1::from(vec![1.0; 5]).view()).is_err());
}

#[test]
fn screening_puts_outcome_column_first() {
    let y = normals(21, 200);
    let mut m = Array2::zeros((200, 3));
    m.column_mut(0).assign(&y);
    m.column_mut(1).assign(&normals(22, 200));
    m.column_mut(2).assign(&normals(23, 200));
    let fm = FeatureMatrix::new(m).unwrap();
    let rv = ResponseVector::continuous(y).unwrap();
    let opts = ScreenOptions::default();
    for method in [MiMethod::FftKde, MiMethod::Binning, MiMethod::Knn, MiMethod::Pearson] {
        let r = screen_all(&fm, &rv, method, &opts, 2).unwrap();
        assert_eq!(r.ranked.order[0].0, 0, "{method:?}");
    }
}

#[test]
fn screening_independent_of_workers() {
    let mut r = ChaCha8Rng::seed_from_u64(24);
    let m = Array2::from_shape_fn((150, 12), |_| r.sample::<f64, _>(StandardNormal));
    let mut m2 = m.clone();
    m2.column_mut(5).fill(1.0);
    let y = m.column(3).mapv(|v| v * v) + normals(25, 150) * 0.3;
    let fm = FeatureMatrix::new(m2).unwrap();
    let rv = ResponseVector::continuous(y).unwrap();
    let opts = ScreenOptions::default();
    for method in [MiMethod::FftKde, MiMethod::Knn] {
        let a = screen_all(&fm, &rv, method, &opts, 1).unwrap();
        let b = screen_all(&fm, &rv, method, &opts, 8).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.scores[5], f64::NEG_INFINITY);
        assert_eq!(a.failures.len(), 1);
    }
}

#[test]
fn fftkde_beats_pearson_on_quadratic_signal() {
    let mut wins = 0;
    for seed in 0..20 {
        let spec = SimSpec {
            n: 500,
            p: 100,
            p_true: 1,
            signal: SignalLayout::ScreeningRecipe,
            outcome: OutcomeKind::ScreeningContinuous,
            nonlinear: true,
            seed: 300 + seed,
            ..Default::default()
        };
        let d = simulate(&spec).unwrap();
        let j = d.signal.support[0];
        let o = ScreenOptions::default();
        let k = screen_all(&d.x, &d.y, MiMethod::FftKde, &o, 1).unwrap().ranked.ranks()[j];
        let p = screen_all(&d.x, &d.y, MiMethod::Pearson, &o, 1).unwrap().ranked.ranks()[j];
        wins += (k < p) as usize;
    }
    assert!(wins >= 16, "{wins}/20");
}

#[test]
fn auroc_examples() {
    assert_eq!(selection_auroc(&[0.9, 0.8, 0.2, 0.1], &[true, false, true, false]).unwrap(), 0.75);
    assert_eq!(selection_auroc(&[3.0, 2.0, 1.0], &[true, true, false]).unwrap(), 1.0);
    assert!(selection_auroc(&[1.0, 2.0], &[true, true]).is_err());
    let mut r = ChaCha8Rng::seed_from_u64(26);
    let s: Vec<f64> = (0..4000).map(|_| r.gen()).collect();
    let t: Vec<bool> = (0..4000).map(|_| r.gen_bool(0.3)).collect();
    assert!((selection_auroc(&s, &t).unwrap() - 0.5).abs() <= 0.05);
}

proptest! {
    #[test]
    fn auroc_equals_pair_count(pairs in prop::collection::vec((0u8..6, any::<bool>()), 2..100)) {
        let scores: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let truth: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        let pos: Vec<f64> = scores.iter().zip(&truth).filter(|p| *p.1).map(|p| *p.0).collect();
        let neg: Vec<f64> = scores.iter().zip(&truth).filter(|p| !*p.1).map(|p| *p.0).collect();
        prop_assume!(!pos.is_empty() && !neg.is_empty());
        let mut c = 0.0;
        for a in &pos {
            for b in &neg {
                c += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
            }
        }
        let want = c / (pos.len() * neg.len()) as f64;
        prop_assert!((selection_auroc(&scores, &truth).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn binning_nonnegative_and_symmetric(seed in 0u64..500) {
        let (x, y) = correlated(seed, 60, 0.3);
        let a = mi_binning(x.view(), y.view()).unwrap().value;
        let b = mi_binning(y.view(), x.view()).unwrap().value;
        prop_assert!(a >= 0.0);
        prop_assert_eq!(a, b);
    }
}

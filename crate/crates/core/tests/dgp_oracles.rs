use std::f64::consts::PI;

use kivo::rng::{stream, Role};
use kivo::synthdata::{bump_density, bump_sample, circle_sample, w_cdf, CircleDgpSpec};
use rand::Rng;

/// Kolmogorov–Smirnov distance between a sample and a continuous CDF.
fn ks_distance<F: Fn(f64) -> f64>(mut xs: Vec<f64>, cdf: F) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn noise_is_mean_zero_given_instrument_and_covariate() {
    let spec = CircleDgpSpec::default();
    let s = circle_sample(&spec, 200_000, &mut stream(3, 0, Role::Aux)).unwrap();
    let bins = 5;
    let mut sum = vec![0.0; bins * bins];
    let mut sq = vec![0.0; bins * bins];
    let mut count = vec![0usize; bins * bins];
    for i in 0..s.eps.len() {
        let b = (s.z[i] * bins as f64) as usize * bins + (s.o[i] * bins as f64) as usize;
        sum[b] += s.eps[i];
        sq[b] += s.eps[i] * s.eps[i];
        count[b] += 1;
    }
    for b in 0..bins * bins {
        let c = count[b] as f64;
        let mean = sum[b] / c;
        let sd = (sq[b] / c - mean * mean).sqrt();
        assert!(mean.abs() <= 5.0 * sd / c.sqrt(), "bin {b}: mean {mean}, sd {sd}, count {c}");
    }

    // The treatment is endogenous: the noise tracks the shift X − Z.
    let cov: f64 = (0..s.eps.len())
        .map(|i| s.eps[i] * (2.0 * PI * 10.0 * (s.x[i] - s.z[i]).rem_euclid(1.0)).sin())
        .sum::<f64>()
        / s.eps.len() as f64;
    assert!((cov - 0.5 * spec.c_e).abs() < 0.01, "cov = {cov}");
}

#[test]
fn projection_matches_averaging_over_the_shift() {
    for k in [1u32, 2, 3] {
        let spec = CircleDgpSpec {
            k,
            ..CircleDgpSpec::default()
        };
        let mut rng = stream(4, k as u64, Role::Aux);
        let draws = 200_000;
        for (z, o) in [(0.1, 0.2), (0.55, 0.9), (0.93, 0.4)] {
            let mut acc = 0.0;
            let mut acc2 = 0.0;
            for _ in 0..draws {
                let w: f64 = (0..k).map(|_| 0.1 * rng.random::<f64>()).sum();
                let f = spec.f_star((z + w).fract(), &[o]);
                acc += f;
                acc2 += f * f;
            }
            let mean = acc / draws as f64;
            let se = ((acc2 / draws as f64 - mean * mean) / draws as f64).sqrt();
            let want = spec.true_projection(z, &[o]);
            assert!((mean - want).abs() <= 5.0 * se + 1e-12, "k = {k}, z = {z}: {mean} vs {want}");
        }
    }
}

#[test]
fn bump_draws_follow_the_bump_density() {
    // CDF by trapezoid integration of the density on a fine grid.
    let grid = 20_000;
    let h = 1.0 / grid as f64;
    let mut cdf = vec![0.0; grid + 1];
    for i in 0..grid {
        let a = -0.5 + i as f64 * h;
        cdf[i + 1] = cdf[i] + 0.5 * h * (bump_density(&[a]) + bump_density(&[a + h]));
    }
    assert!((cdf[grid] - 1.0).abs() < 1e-8, "density integrates to {}", cdf[grid]);
    let lookup = |x: f64| {
        let t = ((x + 0.5) / h).clamp(0.0, grid as f64 - 1e-9);
        let i = t as usize;
        cdf[i] + (t - i as f64) * (cdf[i + 1] - cdf[i])
    };
    let mut rng = stream(5, 0, Role::Aux);
    let n = 100_000;
    let xs: Vec<f64> = (0..n).map(|_| bump_sample(&mut rng)).collect();
    let d = ks_distance(xs, lookup);
    // 1% critical value.
    assert!(d <= 1.63 / (n as f64).sqrt(), "KS = {d}");
}

#[test]
fn shift_draws_follow_the_scaled_irwin_hall_law() {
    for k in [1u32, 2, 4] {
        let spec = CircleDgpSpec {
            k,
            c_e: 0.0,
            ..CircleDgpSpec::default()
        };
        let s = circle_sample(&spec, 50_000, &mut stream(6, k as u64, Role::Aux)).unwrap();
        let w: Vec<f64> = s.x.iter().zip(&s.z).map(|(x, z)| (x - z).rem_euclid(1.0)).collect();
        let d = ks_distance(w, |v| w_cdf(k, v));
        assert!(d <= 1.63 / (50_000f64).sqrt(), "k = {k}: KS = {d}");
    }
}

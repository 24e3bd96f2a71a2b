use std::f64::consts::PI;

use kivo::rng::{stream, Role};
use kivo::spectral::{hard_instance, instance_pair_stats, HardInstanceSpec, PairOperator};
use kivo::synthdata::bump_sample;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::{num_complex::Complex, FftPlanner};

fn spec(k: u32, eps0: Option<f64>) -> HardInstanceSpec {
    let mut s = HardInstanceSpec {
        resolution: k,
        m_order: 2,
        s_x: 1.0,
        s_o: 1.0,
        d_x: 1,
        d_o: 1,
        zeta: 3.0,
        v: Vec::new(),
        eps0,
    };
    s.v = vec![true; s.location_count().unwrap()];
    s
}

/// Hann-windowed energy spectrum of `g` sampled on `u ∈ [-half, half)`, as
/// (|ν|, energy) pairs. The bin width is `2π / (2 half)`.
fn energy_spectrum<F: Fn(f64) -> f64>(g: F, half: f64, du: f64) -> Vec<(f64, f64)> {
    let n = (2.0 * half / du) as usize;
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|i| {
            let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos();
            Complex::new(w * g(-half + i as f64 * du), 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf.iter()
        .enumerate()
        .map(|(k, c)| {
            let kk = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
            ((2.0 * PI * kk / (n as f64 * du)).abs(), c.norm_sqr())
        })
        .collect()
}

#[test]
fn omega_energy_lies_in_its_mask_box() {
    let s = spec(2, Some(1.0));
    assert_eq!(s.x_scale(), 4.0);
    let inst = hard_instance(&s).unwrap();
    for l in 0..s.lx_per_axis() {
        // Work in u = S x, where the box has its unscaled width.
        let spec_e = energy_spectrum(|u| inst.omega(&[l], &[u / 4.0]).unwrap(), 4096.0, 0.25);
        let (a, b) = s.freq_box(&[l])[0];
        // Membership is resolved to one frequency bin.
        let bin = PI / 4096.0;
        let total: f64 = spec_e.iter().map(|p| p.1).sum();
        let inside: f64 = spec_e.iter().filter(|p| p.0 >= a - bin && p.0 <= b + bin).map(|p| p.1).sum();
        assert!(inside / total >= 1.0 - 1e-4, "l = {l}: {}", 1.0 - inside / total);
        // In x-frequency the box sits above 1.1π·4.
        assert!(4.0 * a >= 4.0 * 1.1 * PI && 4.0 * b <= 4.0 * 1.95 * PI);
    }
}

#[test]
fn instances_only_carry_high_frequencies() {
    for k in [2u32, 3] {
        let inst = hard_instance(&spec(k, None)).unwrap();
        let sc = inst.spec().x_scale();
        for o in [0.05, 0.3, 0.5, 0.77] {
            let spec_e = energy_spectrum(|u| inst.eval(&[u / sc], &[o]).unwrap(), 2048.0, 0.25);
            let total: f64 = spec_e.iter().map(|p| p.1).sum();
            if total == 0.0 {
                continue;
            }
            let high: f64 = spec_e.iter().filter(|p| p.0 >= PI).map(|p| p.1).sum();
            assert!(high / total >= 1.0 - 1e-3, "k = {k}, o = {o}: {}", 1.0 - high / total);
        }
    }
}

#[test]
#[ignore = "unattainable: a box-limited spectrum has jump edges, so Ω decays only like 1/|x|; measured |Ω| ≈ 0.22·peak beyond 10(𝔪+1)/S"]
fn omega_decays_outside_effective_support() {
    let s = spec(2, Some(1.0));
    let inst = hard_instance(&s).unwrap();
    let peak = (0..2000)
        .map(|i| inst.omega(&[1], &[-0.5 + i as f64 / 2000.0]).unwrap().abs())
        .fold(0.0, f64::max);
    let r = 10.0 * 3.0 / s.x_scale();
    let far = (0..20_000)
        .map(|i| inst.omega(&[1], &[r + i as f64 * 0.01]).unwrap().abs())
        .fold(0.0, f64::max);
    assert!(far <= 1e-3 * peak, "far/peak = {}", far / peak);
}

#[test]
fn l2_norm_scales_inversely_with_resolution() {
    // Fixed ε₀ across resolutions; the norm is a dense-quadrature estimate.
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for k in [2u32, 3, 4] {
        let f = hard_instance(&spec(k, Some(1.0))).unwrap();
        let mut z = spec(k, Some(1.0));
        z.v = vec![false; f.len()];
        let z = hard_instance(&z).unwrap();
        let st = instance_pair_stats(&f, &z, PairOperator::Identity, 1.0, 1).unwrap();
        xs.push((f.spec().x_scale()).ln());
        ys.push(0.5 * st.l2_sep.ln());
    }
    let mx = xs.iter().sum::<f64>() / 3.0;
    let my = ys.iter().sum::<f64>() / 3.0;
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!((slope + 1.0).abs() <= 0.15, "slope = {slope}");
}

#[test]
fn identity_kl_matches_monte_carlo_gaussian_kl() {
    let f = hard_instance(&spec(2, None)).unwrap();
    let mut z = spec(2, Some(f.eps0()));
    z.v = vec![false; f.len()];
    let zero = hard_instance(&z).unwrap();
    let sigma = 0.02;
    let st = instance_pair_stats(&f, &zero, PairOperator::Identity, sigma, 1).unwrap();
    // Mean log-likelihood ratio log p_v(y)/p_0(y) under P_v.
    let mut rng = stream(11, 0, Role::Aux);
    let n = 200_000;
    let mut acc = 0.0;
    for _ in 0..n {
        let x = [bump_sample(&mut rng)];
        let o: f64 = rng.random();
        let fv = f.eval(&x, &[o]).unwrap();
        let e: f64 = rng.sample(StandardNormal);
        let y = fv + sigma * e;
        acc += (y * y - (y - fv).powi(2)) / (2.0 * sigma * sigma);
    }
    let mc = acc / n as f64;
    assert!((mc - st.kl_upper).abs() <= 0.02 * st.kl_upper, "mc = {mc}, quad = {}", st.kl_upper);
}

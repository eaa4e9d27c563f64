use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;

use ptyinr::engine::data_loss;
use ptyinr::physics::{extract_patch, make_scan_grid, probe_fwhm_diameter, simulate_intensity};
use ptyinr::rng::Rng;
use ptyinr::simulate::{
    add_gaussian, add_mixed, add_poisson, build_dataset, make_phantom, step_for_overlap, NoiseKind, NoiseSpec,
    PhantomConfig, PhantomKind,
};
use ptyinr::ComplexField;

fn field(rows: usize, cols: usize, v: &[(f64, f64)]) -> ComplexField {
    ComplexField::new(rows, cols, v.iter().map(|&(a, p)| Complex64::from_polar(a, p)).collect()).unwrap()
}

/// Random object (10x10), probe (h x w) and step.
fn setup() -> impl Strategy<Value = (ComplexField, ComplexField, usize)> {
    (2usize..7, 2usize..7, 1usize..5).prop_flat_map(|(h, w, step)| {
        let o = prop::collection::vec((0.0f64..1.0, -PI..PI), 100);
        let p = prop::collection::vec((0.0f64..1.0, -PI..PI), h * w);
        (o, p).prop_map(move |(o, p)| (field(10, 10, &o), field(h, w, &p), step))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frames_conserve_exit_wave_energy((o, p, step) in setup()) {
        let grid = make_scan_grid(o.shape(), p.shape(), (step, step)).unwrap();
        let d = simulate_intensity(&o, &p, &grid).unwrap();
        prop_assert_eq!(d.len(), grid.len());
        prop_assert_eq!(d.frames.len(), grid.len() * p.len());
        for (j, &pos) in grid.positions.iter().enumerate() {
            let patch = extract_patch(&o, pos, p.shape()).unwrap();
            let exit: f64 = patch.data().iter().zip(p.data()).map(|(a, b)| (a * b).norm_sqr()).sum();
            let total: f64 = d.frame(j).iter().sum();
            prop_assert!((total - exit).abs() <= 1e-10 * exit.max(1e-300));
        }
    }

    #[test]
    fn opposite_global_phases_cancel((o, p, step) in setup(), theta in -PI..PI) {
        let grid = make_scan_grid(o.shape(), p.shape(), (step, step)).unwrap();
        let a = simulate_intensity(&o, &p, &grid).unwrap();
        let b = simulate_intensity(&o.rotate_phase(theta), &p.rotate_phase(-theta), &grid).unwrap();
        for (x, y) in a.frames.iter().zip(&b.frames) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn intensity_scales_with_square_of_probe((o, p, step) in setup(), c in 0.1f64..10.0) {
        let grid = make_scan_grid(o.shape(), p.shape(), (step, step)).unwrap();
        let a = simulate_intensity(&o, &p, &grid).unwrap();
        let b = simulate_intensity(&o, &p.scale(Complex64::new(c, 0.0)), &grid).unwrap();
        for (x, y) in a.frames.iter().zip(&b.frames) {
            prop_assert!((c * c * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn noise_is_never_negative(v in prop::collection::vec(0.0f64..50.0, 1..64), seed in 0u64..1000) {
        let rng = Rng::stream(seed, "noise");
        let n = v.len();
        for out in [
            add_poisson(&v, n, 10.0, &rng).unwrap(),
            add_gaussian(&v, n, 100.0, &rng).unwrap(),
            add_mixed(&v, n, 10.0, 100.0, &rng).unwrap(),
        ] {
            prop_assert!(out.iter().all(|&x| x >= 0.0));
        }
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

#[test]
fn poisson_moments() {
    let (c, alpha, n) = (7.0, 400.0, 10_000);
    let frames = vec![c; n];
    let out = add_poisson(&frames, 100, alpha, &Rng::stream(1, "noise")).unwrap();
    let (m, sd) = mean_sd(&out);
    let expected_sd = c / alpha.sqrt();
    assert!((m - c).abs() < 3.0 * expected_sd / (n as f64).sqrt(), "mean {m}");
    // standard error of a sample sd is about sd / sqrt(2n)
    assert!((sd - expected_sd).abs() < 3.0 * expected_sd / (2.0 * n as f64).sqrt(), "sd {sd}");
}

#[test]
fn poisson_keeps_zeros_and_blank_sets() {
    let rng = Rng::stream(2, "noise");
    let mut frames = vec![3.0; 16];
    frames[5] = 0.0;
    let out = add_poisson(&frames, 4, 10.0, &rng).unwrap();
    assert_eq!(out[5], 0.0);
    let zeros = vec![0.0; 16];
    assert_eq!(add_poisson(&zeros, 4, 10.0, &rng).unwrap(), zeros);
}

#[test]
fn clipped_gaussian_mean() {
    let n = 100_000;
    let out = add_gaussian(&vec![0.0; n], 1000, 1.0, &Rng::stream(3, "noise")).unwrap();
    let (m, _) = mean_sd(&out);
    let expected = 1.0 / (2.0 * PI).sqrt();
    // sd of max(0, Z) is sqrt(1/2 - 1/(2 pi))
    let se = (0.5 - 1.0 / (2.0 * PI)).sqrt() / (n as f64).sqrt();
    assert!((m - expected).abs() < 3.0 * se, "mean {m}");
}

fn ks_two_sample(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn mixed_approaches_gaussian_for_high_counts() {
    let frames = vec![20.0; 50_000];
    let mixed = add_mixed(&frames, 500, 1e6, 5.0, &Rng::stream(4, "a")).unwrap();
    let gauss = add_gaussian(&frames, 500, 5.0, &Rng::stream(4, "b")).unwrap();
    let d = ks_two_sample(mixed, gauss);
    assert!(d < 0.02, "KS distance {d}");
}

#[test]
fn mixed_without_gaussian_is_poisson() {
    let frames: Vec<f64> = (0..64).map(|i| i as f64 * 0.5).collect();
    let rng = Rng::stream(5, "noise");
    assert_eq!(add_mixed(&frames, 16, 10.0, 0.0, &rng).unwrap(), add_poisson(&frames, 16, 10.0, &rng).unwrap());
    assert_eq!(add_gaussian(&frames, 16, 0.0, &rng).unwrap(), frames);
}

fn bilinear(f: &[f64], n: usize, y: f64, x: f64) -> f64 {
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let at = |r: usize, c: usize| f[r * n + c];
    (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1))
}

/// Mean |f - rotate(f, angle)| over the annulus where spokes are resolved.
fn rotation_residual(f: &[f64], n: usize, angle: f64) -> f64 {
    let c = (n as f64 - 1.0) / 2.0;
    let outer = 0.45 * n as f64;
    let (mut sum, mut count) = (0.0, 0usize);
    for r in 0..n {
        for col in 0..n {
            let (dy, dx) = (r as f64 - c, col as f64 - c);
            let rho = dy.hypot(dx);
            if rho < 0.25 * outer || rho > outer - 4.0 {
                continue;
            }
            let t = dy.atan2(dx) - angle;
            let (y, x) = (c + rho * t.sin(), c + rho * t.cos());
            sum += (f[r * n + col] - bilinear(f, n, y, x)).abs();
            count += 1;
        }
    }
    sum / count as f64
}

#[test]
fn siemens_rotation_symmetry() {
    let cfg = PhantomConfig {
        kind: PhantomKind::Siemens,
        object_shape: (128, 128),
        spokes: 12,
        ..PhantomConfig::default()
    };
    let ph = make_phantom(&cfg).unwrap();
    let phase = ph.object.phase();
    let period = 2.0 * PI / 12.0;
    let same = rotation_residual(&phase, 128, period);
    let half = rotation_residual(&phase, 128, period / 2.0);
    assert!(same < 0.02, "residual {same}");
    assert!(same < 0.1 * half, "{same} vs half-period {half}");
}

#[test]
fn noisy_datasets_regenerate_bit_identically() {
    let ph = make_phantom(&PhantomConfig::default()).unwrap();
    let noise = NoiseSpec {
        kind: NoiseKind::Mixed,
        seed: 9,
        ..NoiseSpec::default()
    };
    let a = build_dataset(&ph, (5, 5), &noise).unwrap();
    let b = build_dataset(&ph, (5, 5), &noise).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.data.frames), bits(&b.data.frames));
    let c = build_dataset(&ph, (5, 5), &NoiseSpec { seed: 10, ..noise }).unwrap();
    assert_ne!(bits(&a.data.frames), bits(&c.data.frames));
}

#[test]
fn noise_free_truth_has_zero_loss() {
    let ph = make_phantom(&PhantomConfig::default()).unwrap();
    let d = build_dataset(&ph, (4, 4), &NoiseSpec::default()).unwrap();
    assert_eq!(data_loss(&d.data, &ph.object, &ph.probe, 1e-2).unwrap(), 0.0);
}

#[test]
fn full_scale_forty_percent_builds() {
    let cfg = PhantomConfig {
        kind: PhantomKind::Siemens,
        object_shape: (181, 181),
        probe_shape: (64, 64),
        ..PhantomConfig::default()
    };
    let ph = make_phantom(&cfg).unwrap();
    let fwhm = probe_fwhm_diameter(&ph.probe).unwrap();
    assert!(fwhm < 32.0);
    let step = step_for_overlap(40.0, fwhm);
    let d = build_dataset(&ph, (step, step), &NoiseSpec::default()).unwrap();
    assert_eq!(d.data.frames.len(), d.data.grid.len() * 64 * 64);
    assert!(ph.object.amplitude().iter().all(|&a| a <= 1.0));
    assert_eq!(ph.probe.max_amplitude(), 1.0);
}

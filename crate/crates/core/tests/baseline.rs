use num_complex::Complex64;

use ptyinr::engine::ProbeMode;
use ptyinr::epie::{epie_reconstruct, gaussian_probe, EpieConfig};
use ptyinr::metrics::{eval_region, score_field};
use ptyinr::physics::probe_fwhm_diameter;
use ptyinr::simulate::{build_dataset, make_phantom, step_for_overlap, NoiseSpec, PhantomConfig};
use ptyinr::ComplexField;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn fourier_error_trend_is_non_increasing() {
    let mut curves = Vec::new();
    for seed in 0..20 {
        let cfg = PhantomConfig {
            object_shape: (32, 32),
            probe_shape: (16, 16),
            seed,
            ..PhantomConfig::default()
        };
        let ph = make_phantom(&cfg).unwrap();
        let d = build_dataset(&ph, (3, 3), &NoiseSpec::default()).unwrap();
        let ones = ComplexField::filled(32, 32, Complex64::new(1.0, 0.0));
        let init = gaussian_probe((16, 16), 4.0);
        let e = EpieConfig {
            iterations: 10,
            seed,
            ..EpieConfig::default()
        };
        curves.push(epie_reconstruct(&d.data, &ones, &init, &e).unwrap().fourier_errors);
    }
    let medians: Vec<f64> = (0..10).map(|i| median(curves.iter().map(|c| c[i]).collect())).collect();
    assert!(medians.windows(2).all(|w| w[1] <= w[0]), "{medians:?}");
}

#[test]
fn known_probe_reaches_thirty_db() {
    let cfg = PhantomConfig::default();
    let ph = make_phantom(&cfg).unwrap();
    let step = step_for_overlap(40.0, probe_fwhm_diameter(&ph.probe).unwrap());
    let d = build_dataset(&ph, (step, step), &NoiseSpec::default()).unwrap();
    let ones = ComplexField::filled(64, 64, Complex64::new(1.0, 0.0));
    let e = EpieConfig {
        probe_mode: ProbeMode::Fixed,
        ..EpieConfig::default()
    };
    let out = epie_reconstruct(&d.data, &ones, &ph.probe, &e).unwrap();
    let m = cfg.margin();
    let s = score_field(&eval_region(&out.result.object, m).unwrap(), &eval_region(&ph.object, m).unwrap()).unwrap();
    assert!(s.phase_psnr >= 30.0, "phase PSNR {}", s.phase_psnr);
}

#[test]
fn runs_are_deterministic() {
    let ph = make_phantom(&PhantomConfig {
        object_shape: (32, 32),
        ..PhantomConfig::default()
    })
    .unwrap();
    let d = build_dataset(&ph, (4, 4), &NoiseSpec::default()).unwrap();
    let ones = ComplexField::filled(32, 32, Complex64::new(1.0, 0.0));
    let init = gaussian_probe((16, 16), 4.0);
    let e = EpieConfig {
        iterations: 5,
        seed: 3,
        ..EpieConfig::default()
    };
    let a = epie_reconstruct(&d.data, &ones, &init, &e).unwrap();
    let b = epie_reconstruct(&d.data, &ones, &init, &e).unwrap();
    assert_eq!(a, b);
}

use phasenet_core::losses::wrapped_difference;
use phasenet_core::{FilterBank, RealGrid};
use phasenet_core::baseline::*;
use phasenet_core::pyramid::{relative_l2, PyramidConfig};
use phasenet_core::synth::{self, Texture};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

#[test]
fn midpoint_examples() {
    assert!((phase_midpoint(0.2, 0.6) - 0.4).abs() < 1e-15);
    // shorter arc crosses ±π
    assert!((phase_midpoint(PI - 0.1, -PI + 0.1) - PI).abs() < 1e-12);
    // exact tie moves forward from the first phase
    assert!((phase_midpoint(0.0, PI) - PI / 2.0).abs() < 1e-15);
}

#[test]
fn equal_inputs_reproduce_the_frame() {
    let bank = FilterBank::new(&PyramidConfig::with_levels(5), (48, 48)).unwrap();
    let img = synth::natural_image(48, 48, 3).channel(0);
    let r = bank.decompose(&img).unwrap();
    let out = naive_phase_interpolate(&r, &r, &bank).unwrap();
    let no_hp = bank.reconstruct(&r, false).unwrap();
    assert!(relative_l2(&out, &no_hp) < 1e-12);
    let floor = relative_l2(&no_hp, &img);
    assert!(relative_l2(&out, &img) <= floor + 1e-3);
}

fn shifted(tex: &Texture, d: f64) -> RealGrid {
    tex.render(64, 64, 32.0, 32.0, 0.0, d).channel(0)
}

#[test]
fn small_shifts_interpolate_and_large_shifts_ghost() {
    let bank = FilterBank::new(&PyramidConfig::with_levels(6), (64, 64)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let tex = Texture::random(&mut rng, 128.0, 0.6 * PI);
    let err = |d: f64| {
        let r1 = bank.decompose(&shifted(&tex, -d / 2.0)).unwrap();
        let r2 = bank.decompose(&shifted(&tex, d / 2.0)).unwrap();
        let out = naive_phase_interpolate(&r1, &r2, &bank).unwrap();
        let mid = shifted(&tex, 0.0);
        // interior only, away from content entering at the borders
        let mut sum = 0.0;
        for y in 8..56 {
            for x in 8..56 {
                sum += (out.get(y, x) - mid.get(y, x)).abs();
            }
        }
        sum / (48.0 * 48.0)
    };
    let small = err(1.0);
    let large = err(7.0);
    assert!(small < 0.01, "small-shift error {small}");
    assert!(large > 2.0 * small, "large {large} vs small {small}");
}

#[test]
fn sinusoid_moves_halfway() {
    let (h, w) = (64, 64);
    let bank = FilterBank::new(&PyramidConfig::with_levels(4), (h, w)).unwrap();
    let k = 2.0 * PI / 8.0;
    let wave = |t: f64| RealGrid::from_fn(h, w, |_, x| 0.5 + 0.3 * (k * (x as f64 - t)).cos());
    let r1 = bank.decompose(&wave(-1.0)).unwrap();
    let r2 = bank.decompose(&wave(1.0)).unwrap();
    let out = naive_phase_interpolate(&r1, &r2, &bank).unwrap();
    let target = bank.reconstruct(&bank.decompose(&wave(0.0)).unwrap(), false).unwrap();
    let e = relative_l2(&out, &target);
    assert!(e < 1e-6, "{e}");
}

proptest! {
    #[test]
    fn midpoint_is_equidistant(a in -PI..PI, b in -PI..PI) {
        let d = wrapped_difference(b, a);
        prop_assume!(d.abs() < PI - 1e-9);
        let m = phase_midpoint(a, b);
        prop_assert!(m > -PI && m <= PI);
        let left = wrapped_difference(m, a);
        let right = wrapped_difference(b, m);
        prop_assert!((left - right).abs() < 1e-12);
        // symmetric away from the tie
        prop_assert!(wrapped_difference(phase_midpoint(b, a), m).abs() < 1e-12);
    }
}

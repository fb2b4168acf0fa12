use phasenet_core::{Error, Image, PyramidConfig, RealGrid};
use phasenet_core::evalkit::*;
use phasenet_core::synth;
use proptest::prelude::*;

/// Direct 2-D window evaluation.
fn ssim_oracle(a: &RealGrid, b: &RealGrid) -> f64 {
    let r = SSIM_WINDOW / 2;
    let mut weights = vec![vec![0.0; SSIM_WINDOW]; SSIM_WINDOW];
    let mut wsum = 0.0;
    for (i, row) in weights.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - r as f64, j as f64 - r as f64);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            wsum += *v;
        }
    }
    let (h, w) = a.shape();
    let (c1, c2) = (1e-4, 9e-4);
    let mut total = 0.0;
    let mut count = 0;
    for y0 in 0..=h - SSIM_WINDOW {
        for x0 in 0..=w - SSIM_WINDOW {
            let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..SSIM_WINDOW {
                for j in 0..SSIM_WINDOW {
                    let g = weights[i][j] / wsum;
                    let (p, q) = (a.get(y0 + i, x0 + j), b.get(y0 + i, x0 + j));
                    mx += g * p;
                    my += g * q;
                    xx += g * p * p;
                    yy += g * q * q;
                    xy += g * p * q;
                }
            }
            let (vx, vy, cov) = (xx - mx * mx, yy - my * my, xy - mx * my);
            total += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn ssim_matches_direct_windows() {
    let a = synth::natural_image(24, 30, 1).channel(0);
    let b = synth::noise_image(24, 30, 2).channel(0).map(|v| 0.2 + 0.6 * v);
    let mixed = RealGrid::from_fn(24, 30, |y, x| 0.7 * a.get(y, x) + 0.3 * b.get(y, x));
    for (p, q) in [(&a, &b), (&a, &mixed), (&b, &b)] {
        let fast = ssim_plane(p, q).unwrap();
        assert!((fast - ssim_oracle(p, q)).abs() < 1e-10);
    }
}

#[test]
fn identical_frames_score_exactly() {
    let img = synth::natural_image(32, 32, 4);
    assert_eq!(psnr(&img, &img).unwrap(), PSNR_CAP);
    assert_eq!(ssim(&img, &img).unwrap(), 1.0);
}

#[test]
fn psnr_reference_values() {
    let a = Image::filled(4, 4, 1, 0.5);
    let b = Image::filled(4, 4, 1, 0.6);
    // mse 0.01 gives 20 dB
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    let c = Image::filled(4, 4, 1, 0.5 + 1e-6);
    assert!((psnr(&a, &c).unwrap() - 99.0).abs() < 1e-12 || psnr(&a, &c).unwrap() < 99.0);
    assert!(psnr(&a, &Image::filled(4, 5, 1, 0.5)).is_err());
}

#[test]
fn small_frames_are_rejected() {
    let img = Image::filled(10, 40, 1, 0.5);
    assert!(matches!(ssim(&img, &img), Err(Error::FrameTooSmall { .. })));
}

#[test]
fn passthrough_hits_the_ceiling() {
    let frames: Vec<Image> = (0..4).map(|s| synth::natural_image(16, 16, s)).collect();
    let method = Passthrough { frames: frames.clone() };
    let report = leave_one_out(&frames, &method, "seq").unwrap();
    assert_eq!(report.frames.iter().map(|f| f.index).collect::<Vec<_>>(), vec![1, 2]);
    assert_eq!(report.mean_psnr, PSNR_CAP);
    assert_eq!(report.mean_ssim, 1.0);
    let jsonl = report.to_jsonl();
    assert_eq!(jsonl.lines().count(), 3);
    assert!(format_table(&[report]).contains("passthrough"));
    assert!(matches!(leave_one_out(&frames[..2], &method, "seq"), Err(Error::TooFewFrames(2))));
}

#[test]
fn average_of_static_frames_is_exact() {
    let img = synth::natural_image(20, 20, 5);
    let frames = vec![img.clone(), img.clone(), img];
    let report = leave_one_out(&frames, &Average, "still").unwrap();
    assert_eq!(report.mean_psnr, PSNR_CAP);
}

#[test]
fn baseline_handles_awkward_sizes() {
    let frames: Vec<Image> = (0..3).map(|_| synth::natural_image(13, 21, 6)).collect();
    let method = PhaseBaseline::new(PyramidConfig::with_levels(3));
    let out = method.interpolate(&frames[0], &frames[2], 1).unwrap();
    assert_eq!(out.dims(), (13, 21, 1));
    assert!(psnr(&out, &frames[1]).unwrap() > 25.0);
}

proptest! {
    #[test]
    fn metrics_are_symmetric_and_bounded(seed in 0u64..1000, mix in 0.0f64..1.0) {
        let a = synth::natural_image(16, 16, seed);
        let n = synth::noise_image(16, 16, seed + 1);
        let b = Image::from_fn(16, 16, 1, |c, y, x| (1.0 - mix) * a.get(c, y, x) + mix * n.get(c, y, x));
        let p = psnr(&a, &b).unwrap();
        prop_assert!(p > 0.0 && p <= PSNR_CAP);
        prop_assert_eq!(p, psnr(&b, &a).unwrap());
        let s = ssim(&a, &b).unwrap();
        prop_assert!(s <= 1.0 + 1e-12 && s >= -1.0);
        prop_assert!((s - ssim(&b, &a).unwrap()).abs() < 1e-12);
    }
}

use std::path::Path;
use phasenet_core::synth::Texture;
use phasenet_core::{Error, Image};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use phasenet_core::trainer::dataset::*;
use phasenet_core::imageio::{encode_png, BitDepth};

fn write_frames(dir: &Path, count: usize, size: (usize, usize)) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..count {
        let img = Image::from_fn(size.0, size.1, 1, |_, y, x| ((i + y + x) % 9) as f64 / 9.0);
        std::fs::write(dir.join(format!("f{i:03}.png")), encode_png(&img, BitDepth::Eight).unwrap()).unwrap();
    }
}

#[test]
fn sliding_windows_stay_inside_sequences() {
    let root = tempfile::tempdir().unwrap();
    write_frames(&root.path().join("a"), 5, (8, 8));
    assert_eq!(load_triplets(root.path()).unwrap().len(), 3);

    let root = tempfile::tempdir().unwrap();
    write_frames(&root.path().join("a"), 3, (8, 8));
    write_frames(&root.path().join("b"), 3, (6, 6));
    let ds = load_triplets(root.path()).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.dims(1), (6, 6, 1));
}

#[test]
fn empty_and_inconsistent_directories_fail() {
    let root = tempfile::tempdir().unwrap();
    assert!(matches!(load_triplets(root.path()), Err(Error::EmptyDataset(_))));
    write_frames(&root.path().join("a"), 2, (8, 8));
    assert!(matches!(load_triplets(root.path()), Err(Error::EmptyDataset(_))));
    assert!(load_triplets(&root.path().join("missing")).is_err());

    let root = tempfile::tempdir().unwrap();
    let seq = root.path().join("s");
    write_frames(&seq, 2, (8, 8));
    let odd = Image::filled(8, 9, 1, 0.5);
    std::fs::write(seq.join("f999.png"), encode_png(&odd, BitDepth::Eight).unwrap()).unwrap();
    assert!(matches!(load_triplets(root.path()), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn batches_are_seeded_and_share_one_transform() {
    let ds = synthetic_triplets(&SyntheticConfig {
        count: 4,
        size: 24,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let draw = || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        sample_batch(&ds, 16, 6, (true, true), &mut rng).unwrap()
    };
    assert_eq!(draw(), draw());

    // replay the draws and check the three frames saw the same transform
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batch = sample_batch(&ds, 16, 6, (true, true), &mut rng).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for s in &batch {
        let index = rng.random_range(0..ds.len());
        let aug = Augmentation {
            top: rng.random_range(0..=8),
            left: rng.random_range(0..=8),
            flip_horizontal: rng.random::<bool>(),
            flip_vertical: rng.random::<bool>(),
        };
        let [a, b, c] = ds.triplet(index).unwrap();
        assert_eq!(s.first, aug.apply(&a, 16).unwrap().channel(0));
        assert_eq!(s.middle, aug.apply(&b, 16).unwrap().channel(0));
        assert_eq!(s.last, aug.apply(&c, 16).unwrap().channel(0));
    }
}

#[test]
fn full_size_patch_is_identity_and_small_frames_fail() {
    let ds = synthetic_triplets(&SyntheticConfig {
        count: 2,
        size: 16,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batch = sample_batch(&ds, 16, 3, (false, false), &mut rng).unwrap();
    for s in &batch {
        let found = (0..ds.len()).any(|i| ds.triplet(i).unwrap()[1].channel(0) == s.middle);
        assert!(found);
    }
    assert!(matches!(
        sample_batch(&ds, 17, 1, (false, false), &mut rng),
        Err(Error::FrameTooSmall { .. })
    ));
}

#[test]
fn colour_triples_split_into_channels() {
    let img = |v: f64| Image::from_fn(8, 8, 3, |c, y, _| (c as f64 * 0.2 + v + y as f64 * 0.01).min(1.0));
    let ds = TripletDataset::from_sequences(vec![vec![img(0.0), img(0.1), img(0.2)]]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batch = sample_batch(&ds, 8, 2, (false, false), &mut rng).unwrap();
    assert_eq!(batch.len(), 6);
    assert_eq!(batch[1].middle, img(0.1).channel(1));
}

#[test]
fn synthetic_middle_frame_is_the_midpoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tex = Texture::random(&mut rng, 64.0, 1.0);
    let [a, m, b] = translating_triplet(&tex, 32, 0.0, 6.0);
    // outer frames are the middle one moved by ∓3 px
    for y in 0..32 {
        for x in 3..29 {
            assert!((a.get(0, y, x) - m.get(0, y, x + 3)).abs() < 1e-12);
            assert!((b.get(0, y, x) - m.get(0, y, x - 3)).abs() < 1e-12);
        }
    }
}

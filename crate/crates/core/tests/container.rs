use phasenet_core::Error;
use sha2::{Digest, Sha256};
use phasenet_core::container::*;

fn sample() -> Container {
    let mut c = Container::new();
    c.put_f64("w", vec![2, 3], vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300, -2.5, 3.0])
        .unwrap();
    c.put_u64("steps", vec![7, u64::MAX]).unwrap();
    c.put_bytes("meta", b"{\"a\":1}".to_vec()).unwrap();
    c
}

#[test]
fn round_trip_is_bitwise() {
    let c = sample();
    let back = Container::from_bytes(&c.to_bytes()).unwrap();
    assert_eq!(back, c);
    let w = back.f64s("w").unwrap();
    assert_eq!(w[1].to_bits(), (-0.0f64).to_bits());
    assert_eq!(back.get("w").unwrap().dims, vec![2, 3]);
}

#[test]
fn corruption_and_truncation_are_detected() {
    let bytes = sample().to_bytes();
    for cut in [bytes.len() - 1, bytes.len() / 2, 13, 5] {
        assert!(matches!(Container::from_bytes(&bytes[..cut]), Err(Error::Checksum)));
    }
    let mut flipped = bytes.clone();
    flipped[20] ^= 1;
    assert!(matches!(Container::from_bytes(&flipped), Err(Error::Checksum)));
}

#[test]
fn future_versions_are_rejected() {
    let mut bytes = sample().to_bytes();
    bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
    let n = bytes.len() - DIGEST_LEN;
    let digest = Sha256::digest(&bytes[..n]);
    bytes[n..].copy_from_slice(&digest);
    assert!(matches!(
        Container::from_bytes(&bytes),
        Err(Error::UnsupportedVersion { found: 2, supported: 1 })
    ));
}

#[test]
fn bad_dimensions_and_missing_entries() {
    let mut c = Container::new();
    assert!(c.put_f64("x", vec![2, 2], vec![1.0]).is_err());
    assert!(matches!(c.get("nope"), Err(Error::MissingEntry(_))));
    c.put_u64("n", vec![1]).unwrap();
    assert!(c.f64s("n").is_err());
}

#[test]
fn atomic_save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    sample().save(&path).unwrap();
    assert_eq!(Container::load(&path).unwrap(), sample());
    let leftovers: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(leftovers.len(), 1);
}

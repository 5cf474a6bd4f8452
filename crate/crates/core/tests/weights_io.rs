use std::fs;

use activecam_core::nn::{self, build_c3net, load_weights, save_weights, Mode, Scale, Tensor};
use activecam_core::Error;

#[test]
fn full_scale_file_round_trips_bit_exactly() {
    let (g, p) = build_c3net(320, 240, Scale::Full, 21).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c3net.weights");
    save_weights(&p, &path).unwrap();
    let q = load_weights(&path).unwrap();
    g.check_params(&q).unwrap();
    for (a, b) in p.entries.iter().zip(&q.entries) {
        assert_eq!(a.name, b.name);
        assert!(a.tensor.data().iter().zip(b.tensor.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    // Saving the loaded copy reproduces the file byte for byte.
    let again = dir.path().join("again.weights");
    save_weights(&q, &again).unwrap();
    assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn truncated_file_fails_the_checksum() {
    let (_, p) = build_c3net(64, 48, Scale::Tiny, 22).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w");
    save_weights(&p, &path).unwrap();
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
    assert!(matches!(load_weights(&path), Err(Error::Checksum(_))));
}

#[test]
fn mismatched_architecture_names_the_tensor() {
    let (_, tiny) = build_c3net(64, 48, Scale::Tiny, 23).unwrap();
    let (full, _) = build_c3net(64, 48, Scale::Full, 23).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w");
    save_weights(&tiny, &path).unwrap();
    let loaded = load_weights(&path).unwrap();
    match full.check_params(&loaded) {
        Err(Error::Shape(msg)) => assert!(msg.contains("conv1.weight"), "{msg}"),
        other => panic!("expected shape error, got {other:?}"),
    }
}

#[test]
fn reloaded_network_predicts_the_same() {
    let (g, p) = build_c3net(64, 48, Scale::Tiny, 24).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w");
    save_weights(&p, &path).unwrap();
    let q = load_weights(&path).unwrap();
    let x = Tensor::from_vec(
        &[1, 3, 48, 64],
        (0..3 * 48 * 64).map(|i| (i % 17) as f32 / 17.0).collect(),
    )
    .unwrap();
    let a = nn::forward(&g, &p, &x, Mode::infer()).unwrap();
    let b = nn::forward(&g, &q, &x, Mode::infer()).unwrap();
    assert_eq!(a.output(), b.output());
    assert_eq!(a.activity_map(), b.activity_map());
}

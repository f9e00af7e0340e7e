//! The Inception-v3 port against torchvision outputs on closed-form weights
//! (regenerate the fixture with `tests/fixtures/make_inception_fixture.py`).

use std::collections::HashMap;

use safetensors::tensor::TensorView;
use safetensors::Dtype;
use synthforge::metrics::{FeatureExtractor, InceptionV3};
use synthforge::nn::Tensor;

const RES: usize = 32;

fn unit(t: u64, i: u64) -> f64 {
    let mut z = (t << 32).wrapping_add(i).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

fn value(name: &str, t: u64, i: u64, fan_in: usize) -> f64 {
    let u = unit(t, i);
    match name {
        n if n.ends_with("conv.weight") => (6.0 / fan_in as f64).sqrt() * u,
        n if n.ends_with("bn.weight") => 1.0 + 0.1 * u,
        n if n.ends_with("bn.bias") || n.ends_with("running_mean") => 0.02 * u,
        n if n.ends_with("running_var") => 1.0 + 0.2 * u,
        "fc.weight" => 4.0 / 2048f64.sqrt() * u,
        "fc.bias" => 0.1 * u,
        other => panic!("unexpected tensor {other}"),
    }
}

fn write_weights(path: &std::path::Path) {
    let layout = include_str!("fixtures/inception_layout.txt");
    let mut buffers = Vec::new();
    for (t, line) in layout.lines().enumerate() {
        let (name, dims) = line.split_once(' ').unwrap();
        let shape: Vec<usize> = dims.split(',').map(|d| d.parse().unwrap()).collect();
        let count: usize = shape.iter().product();
        let fan_in = if shape.len() > 1 { count / shape[0] } else { 1 };
        let bytes: Vec<u8> = (0..count)
            .flat_map(|i| (value(name, t as u64, i as u64, fan_in) as f32).to_le_bytes())
            .collect();
        buffers.push((name.to_string(), shape, bytes));
    }
    let views: HashMap<String, TensorView> = buffers
        .iter()
        .map(|(n, s, b)| (n.clone(), TensorView::new(Dtype::F32, s.clone(), b).unwrap()))
        .collect();
    std::fs::write(path, safetensors::serialize(views, None).unwrap()).unwrap();
}

fn image(b: usize) -> Vec<f32> {
    (0..3 * RES * RES).map(|i| (0.9 * (0.05 * i as f64 * (b + 1) as f64 + 0.3 * b as f64).sin()) as f32).collect()
}

fn expected() -> Vec<(String, Vec<f64>)> {
    include_str!("fixtures/inception_expected.txt")
        .lines()
        .map(|l| {
            let mut it = l.split(' ');
            let key = it.next().unwrap().to_string();
            (key, it.map(|v| v.parse().unwrap()).collect())
        })
        .collect()
}

#[test]
fn matches_torchvision_reference() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("inception.safetensors");
    write_weights(&path);
    let mut net = InceptionV3::load(&path).unwrap();
    assert!(net.id().starts_with("inception-v3"));

    let mut data = image(0);
    data.extend(image(1));
    let out = net.extract(&Tensor::from_vec(&[2, 3, RES, RES], data)).unwrap();
    assert_eq!(out.features.shape(), (2, 2048));
    assert_eq!(out.probabilities.shape(), (2, 1000));

    let want = expected();
    for b in 0..2 {
        let (_, feats) = &want[2 * b];
        let scale = feats.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (j, &f) in feats.iter().enumerate() {
            let got = out.features[(b, 16 * j)];
            assert!((got - f).abs() <= 1e-3 * scale, "image {b} feature {}: {got} vs {f}", 16 * j);
        }
        let (_, probs) = &want[2 * b + 1];
        for (j, &p) in probs.iter().enumerate() {
            let got = out.probabilities[(b, 10 * j)];
            assert!((got - p).abs() <= 1e-3 * p.max(1e-3), "image {b} class {}: {got} vs {p}", 10 * j);
        }
    }
}

#[test]
fn missing_tensor_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.safetensors");
    let views: HashMap<String, TensorView> = HashMap::new();
    std::fs::write(&path, safetensors::serialize(views, None).unwrap()).unwrap();
    let err = InceptionV3::load(&path).err().unwrap().to_string();
    assert!(err.contains("Conv2d_1a_3x3.conv.weight"), "{err}");
    assert!(InceptionV3::load(&dir.path().join("absent")).is_err());
}

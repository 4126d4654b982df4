use std::collections::HashMap;

use automac::encoder::{build_encoder, Backbone, Encoder, EncoderConfig, PRETRAINED_FILE};
use automac::ingestion::PreprocessedImage;
use automac::Error;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safetensors::tensor::{Dtype, TensorView};

fn images(n: usize, size: usize, seed: u64) -> Vec<PreprocessedImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let plane = Array2::from_shape_fn((size, size), |_| rng.random_range(-2.0f32..2.0));
            PreprocessedImage::from_plane(plane, format!("img{i}"))
        })
        .collect()
}

#[test]
fn embedding_does_not_depend_on_batch_mates() {
    let encoder = build_encoder(&EncoderConfig::tiny()).unwrap();
    let batch = images(16, 64, 1);
    let together = encoder.embed(&batch).unwrap();
    for (i, img) in batch.iter().enumerate().step_by(5) {
        let alone = encoder.embed(std::slice::from_ref(img)).unwrap();
        let worst = alone[0]
            .values()
            .iter()
            .zip(together[i].values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(worst < 1e-5, "row {i} differs by {worst}");
    }
}

#[test]
fn checkpoint_round_trip_preserves_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("enc.safetensors");
    let cfg = EncoderConfig {
        fc_widths: vec![64, 32],
        init_seed: 4,
        ..EncoderConfig::tiny()
    };
    let encoder = build_encoder(&cfg).unwrap();
    encoder.save(&path).unwrap();
    let loaded = Encoder::load(&path).unwrap();
    assert_eq!(loaded.fingerprint(), encoder.fingerprint());
    assert_eq!(loaded.config(), encoder.config());
    let batch = images(3, 64, 2);
    assert_eq!(loaded.embed(&batch).unwrap(), encoder.embed(&batch).unwrap());
    assert_eq!(encoder.embedding_dim(), 32);
}

#[test]
fn tampered_checkpoint_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("enc.safetensors");
    let encoder = build_encoder(&EncoderConfig::tiny()).unwrap();
    let mut store = encoder.to_store().unwrap();
    store.tensors[0].data[0] += 1.0;
    automac::store::write_store(&path, &store).unwrap();
    assert!(matches!(Encoder::load(&path), Err(Error::FingerprintMismatch { .. })));
}

/// Tensor names and shapes of a torchvision ResNet-18 state dict.
fn torchvision_resnet18() -> Vec<(String, Vec<usize>)> {
    let mut out = vec![("conv1.weight".to_string(), vec![64, 3, 7, 7])];
    let bn = |out: &mut Vec<(String, Vec<usize>)>, prefix: &str, c: usize| {
        for field in ["weight", "bias", "running_mean", "running_var", "num_batches_tracked"] {
            let shape = if field == "num_batches_tracked" { vec![] } else { vec![c] };
            out.push((format!("{prefix}.{field}"), shape));
        }
    };
    bn(&mut out, "bn1", 64);
    let mut in_c = 64;
    for (layer, c) in [(1, 64), (2, 128), (3, 256), (4, 512)] {
        for block in 0..2 {
            let p = format!("layer{layer}.{block}");
            let first_in = if block == 0 { in_c } else { c };
            out.push((format!("{p}.conv1.weight"), vec![c, first_in, 3, 3]));
            bn(&mut out, &format!("{p}.bn1"), c);
            out.push((format!("{p}.conv2.weight"), vec![c, c, 3, 3]));
            bn(&mut out, &format!("{p}.bn2"), c);
            if block == 0 && layer > 1 {
                out.push((format!("{p}.downsample.0.weight"), vec![c, in_c, 1, 1]));
                bn(&mut out, &format!("{p}.downsample.1"), c);
            }
        }
        in_c = c;
    }
    out.push(("fc.weight".into(), vec![1000, 512]));
    out.push(("fc.bias".into(), vec![1000]));
    out
}

/// Writes random torchvision-style weights (batch counters as `i64`, as a
/// real export has them) and returns the `f32` values by name.
fn write_fake_weights(dir: &std::path::Path) -> HashMap<String, Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let spec = torchvision_resnet18();
    let mut values = HashMap::new();
    let mut bytes: Vec<(String, Dtype, Vec<usize>, Vec<u8>)> = Vec::new();
    for (name, shape) in spec {
        if name.ends_with("num_batches_tracked") {
            bytes.push((name, Dtype::I64, shape, 100i64.to_le_bytes().to_vec()));
            continue;
        }
        let len = shape.iter().product::<usize>();
        let data: Vec<f32> = (0..len)
            .map(|_| {
                if name.ends_with("running_var") {
                    rng.random_range(0.5f32..1.5)
                } else {
                    rng.random_range(-0.05f32..0.05)
                }
            })
            .collect();
        bytes.push((name.clone(), Dtype::F32, shape, data.iter().flat_map(|v| v.to_le_bytes()).collect()));
        values.insert(name, data);
    }
    let views: Vec<(String, TensorView)> = bytes
        .iter()
        .map(|(n, d, s, b)| (n.clone(), TensorView::new(*d, s.clone(), b).unwrap()))
        .collect();
    let file = safetensors::serialize(views, None).unwrap();
    std::fs::write(dir.join(PRETRAINED_FILE), file).unwrap();
    values
}

#[test]
fn pretrained_backbone_is_copied_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let values = write_fake_weights(dir.path());
    let cfg = EncoderConfig {
        pretrained: true,
        input_size: 32,
        weights_dir: Some(dir.path().to_path_buf()),
        ..EncoderConfig::default()
    };
    assert_eq!(cfg.backbone, Backbone::Resnet18);
    let encoder = build_encoder(&cfg).unwrap();
    let store = encoder.to_store().unwrap();
    let mut copied = 0;
    for t in &store.tensors {
        if let Some(name) = t.name.strip_prefix("backbone.") {
            assert_eq!(&t.data, &values[name], "{name}");
            copied += 1;
        }
    }
    assert_eq!(copied, values.len() - 2, "every backbone tensor but the classifier");
    assert_eq!(build_encoder(&cfg).unwrap().fingerprint(), encoder.fingerprint());
    let other_seed = EncoderConfig { init_seed: 1, ..cfg.clone() };
    assert_ne!(build_encoder(&other_seed).unwrap().fingerprint(), encoder.fingerprint());
    assert_eq!(encoder.embed(&images(2, 32, 3)).unwrap().len(), 2);
}

#[test]
fn missing_pretrained_weights_name_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = EncoderConfig {
        weights_dir: Some(dir.path().to_path_buf()),
        ..EncoderConfig::default()
    };
    let err = build_encoder(&cfg).unwrap_err();
    assert!(matches!(err, Error::PretrainedUnavailable { .. }));
    assert!(err.to_string().contains(&dir.path().join(PRETRAINED_FILE).display().to_string()));
    assert_eq!(err.exit_code(), 2);
}

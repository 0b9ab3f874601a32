//! Byte-level fidelity of every file format against fixtures written by
//! `scripts/make_fixtures.py` or by hand.

use std::path::{Path, PathBuf};

use capsforge::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use capsforge::cifar::{encode_batch, load_cifar10};
use capsforge::idx::{load_idx, read_idx, save_idx, IMAGES_MAGIC};
use capsforge::pnm::{encode_pnm, read_image, write_image};
use capsforge::Error;
use capsforge_core::capsule::{CapsNetConfig, LossConfig};
use capsforge_core::cnn::CnnConfig;
use capsforge_core::data::Split;
use capsforge_core::train::{Model, ModelConfig};
use capsforge_core::Tensor;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn idx_fixture_loads_exact_pixels_and_round_trips() {
    let (img, lab) = (fixture("two-images-idx3-ubyte"), fixture("two-labels-idx1-ubyte"));
    let ds = load_idx(&img, &lab, 10, "fixture", Split::Test).unwrap();
    assert_eq!(ds.images().shape(), &[2, 1, 3, 2]);
    assert_eq!(ds.labels(), [7, 2]);
    for n in 0..2 {
        for k in 0..6 {
            let want = ((n * 100 + k * 37) % 256) as f32 / 255.0;
            assert_eq!(ds.images().outer(n)[k], want);
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let (img2, lab2) = (dir.path().join("i"), dir.path().join("l"));
    save_idx(&ds, &img2, &lab2).unwrap();
    assert_eq!(std::fs::read(&img2).unwrap(), std::fs::read(&img).unwrap());
    assert_eq!(std::fs::read(&lab2).unwrap(), std::fs::read(&lab).unwrap());
}

#[test]
fn labels_with_an_image_magic_are_rejected() {
    let img = fixture("two-images-idx3-ubyte");
    let err = load_idx(&img, &img, 10, "x", Split::Test).unwrap_err();
    assert!(matches!(err, Error::Format { .. }), "{err}");
    assert!(err.to_string().contains("00 00 08 03"), "{err}");
}

#[test]
fn truncated_idx_is_a_length_error() {
    let bytes = std::fs::read(fixture("two-images-idx3-ubyte")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("cut");
    std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(read_idx(&p, &[IMAGES_MAGIC]), Err(Error::Length { expected: 28, found: 25, .. })));
}

#[test]
fn cifar_record_fixture() {
    let path = fixture("one-record.bin");
    let ds = load_cifar10(&[&path], Split::Train).unwrap();
    assert_eq!(ds.images().shape(), &[1, 3, 32, 32]);
    assert_eq!(ds.labels(), [6]);
    for c in 0..3 {
        for y in 0..32 {
            for x in 0..32 {
                let want = ((c * 85 + y * 7 + x * 3) % 256) as f32 / 255.0;
                assert_eq!(ds.images().at(&[0, c, y, x]), want);
            }
        }
    }
    let back = encode_batch(&ds.to_bytes(), ds.labels());
    assert_eq!(back, std::fs::read(&path).unwrap());
}

#[test]
fn cifar_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.bin");
    std::fs::write(&empty, b"").unwrap();
    assert_eq!(load_cifar10(&[&empty], Split::Test).unwrap().len(), 0);
    let odd = dir.path().join("odd.bin");
    std::fs::write(&odd, vec![0u8; 3074]).unwrap();
    assert!(matches!(load_cifar10(&[&odd], Split::Test), Err(Error::Format { .. })));
    // two files concatenate in order
    let rec = std::fs::read(fixture("one-record.bin")).unwrap();
    let mut other = rec.clone();
    other[0] = 1;
    let second = dir.path().join("second.bin");
    std::fs::write(&second, &other).unwrap();
    let both = load_cifar10(&[fixture("one-record.bin"), second], Split::Train).unwrap();
    assert_eq!(both.labels(), [6, 1]);
}

#[test]
fn pgm_golden_bytes() {
    // 2×2: 0, 1, 0.5, 0.2 → 0x00 0xff 0x80 0x33 (0.5·255 = 127.5 rounds up)
    let img = Tensor::new([1, 2, 2], vec![0.0f32, 1.0, 0.5, 0.2]).unwrap();
    let (bytes, clamped) = encode_pnm(&img).unwrap();
    assert_eq!(bytes, b"P5\n2 2\n255\n\x00\xff\x80\x33");
    assert_eq!(clamped, 0);
}

#[test]
fn ppm_golden_bytes_interleave_channels() {
    // planes R = [1, 0], G = [0, 1], B = [0.5, 0] of a 1×2 image
    let img = Tensor::new([3, 1, 2], vec![1.0f32, 0.0, 0.0, 1.0, 0.5, 0.0]).unwrap();
    let (bytes, _) = encode_pnm(&img).unwrap();
    assert_eq!(bytes, b"P6\n2 1\n255\n\xff\x00\x80\x00\xff\x00");
}

#[test]
fn written_images_read_back_quantised() {
    let dir = tempfile::tempdir().unwrap();
    for c in [1, 3] {
        let img = Tensor::from_fn([c, 5, 7], |i| ((i * 29) % 101) as f32 / 100.0);
        let p = dir.path().join(format!("x{c}.pnm"));
        write_image(&p, &img).unwrap();
        let back = read_image(&p).unwrap();
        assert_eq!((back.channels, back.height, back.width), (c, 5, 7));
        let q: Tensor<f32> = back.to_tensor();
        let again = dir.path().join(format!("y{c}.pnm"));
        write_image(&again, &q).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&again).unwrap());
        for (a, b) in img.data().iter().zip(q.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
}

fn checkpoint_round_trip(config: ModelConfig, images: Tensor<f32>) {
    let model = Model::<f32>::init(&config, 11).unwrap();
    let meta = CheckpointMeta {
        model: config.clone(),
        epoch: 1,
        seed: 11,
        optimizer_steps: 0,
        next_shuffle_index: 1,
        train: None,
    };
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("checkpoints/m.cpsn");
    save_checkpoint(&p, &model, &meta).unwrap();
    assert!(!p.with_extension("cpsn.tmp").exists());
    let (back, back_meta) = load_checkpoint::<f32>(&p).unwrap();
    assert_eq!(back_meta, meta);
    let (a, b) = (model.scores(&images).unwrap(), back.scores(&images).unwrap());
    let bits = |t: &Tensor<f32>| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    // saving the loaded model reproduces the file
    let p2 = dir.path().join("again.cpsn");
    save_checkpoint(&p2, &back, &back_meta).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
}

#[test]
fn capsnet_checkpoint_reproduces_scores_bit_for_bit() {
    let config = ModelConfig::CapsNet {
        net: CapsNetConfig::tiny(),
        loss: LossConfig::default(),
    };
    checkpoint_round_trip(config, Tensor::from_fn([3, 1, 12, 12], |i| (i % 17) as f32 / 16.0));
}

#[test]
fn cnn_checkpoint_reproduces_logits_bit_for_bit() {
    let config = ModelConfig::Cnn {
        net: CnnConfig::with_maps(1, 28, 10, [4, 4, 8], 16),
    };
    checkpoint_round_trip(config, Tensor::from_fn([2, 1, 28, 28], |i| (i % 23) as f32 / 22.0));
}

#[test]
fn missing_checkpoint_is_reported_as_missing() {
    let err = load_checkpoint::<f32>(Path::new("/nonexistent/final.cpsn")).unwrap_err();
    assert!(matches!(err, Error::Missing(_)));
    assert_eq!(err.exit_code(), 3);
}

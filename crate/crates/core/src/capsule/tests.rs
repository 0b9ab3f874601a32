use alloc::vec;
use alloc::vec::Vec;

use super::*;
use crate::autodiff::{grad_check_many, Graph};
use crate::params::Parameters;
use crate::{Error, Tensor};

fn noise(len: usize, seed: u64) -> Vec<f64> {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    (0..len)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Plain nested-vector routing used as an independent reference.
fn routing_oracle(u: &[Vec<Vec<f64>>], r: usize) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let (ni, nj, d) = (u.len(), u[0].len(), u[0][0].len());
    let mut b = vec![vec![0.0; nj]; ni];
    let mut v = vec![vec![0.0; d]; nj];
    let mut cs = Vec::new();
    for _ in 0..r {
        let c: Vec<Vec<f64>> = b
            .iter()
            .map(|row| {
                let m = row.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
                let z: f64 = e.iter().sum();
                e.iter().map(|x| x / z).collect()
            })
            .collect();
        for j in 0..nj {
            let s: Vec<f64> = (0..d).map(|k| (0..ni).map(|i| c[i][j] * u[i][j][k]).sum()).collect();
            let q = s.iter().map(|x| x * x).sum::<f64>() + 1e-9;
            v[j] = s.iter().map(|x| x * q.sqrt() / (1.0 + q)).collect();
        }
        for i in 0..ni {
            for j in 0..nj {
                b[i][j] += (0..d).map(|k| u[i][j][k] * v[j][k]).sum::<f64>();
            }
        }
        cs.push(c);
    }
    (v, cs)
}

fn nested(t: &Tensor<f64>) -> Vec<Vec<Vec<f64>>> {
    let s = t.shape();
    (0..s[0])
        .map(|i| (0..s[1]).map(|j| (0..s[2]).map(|k| t.at(&[i, j, k])).collect()).collect())
        .collect()
}

#[test]
fn squash_closed_form() {
    for (len, want) in [(0.0, 0.0), (1.0, 0.5), (3.0, 0.9)] {
        let dir = [0.6, -0.8, 0.0];
        let s: Vec<f64> = dir.iter().map(|d| d * len).collect();
        let v = squash(&Tensor::from_f64([3], &s).unwrap()).unwrap();
        let v = v.data();
        assert!((norm(v) - want).abs() < 1e-7, "‖s‖={len}: ‖v‖={}", norm(v));
        if len > 0.0 {
            for (a, d) in v.iter().zip(dir) {
                assert!((a / norm(v) - d).abs() < 1e-7);
            }
        } else {
            assert!(v.iter().all(|&x| x == 0.0));
        }
    }
}

#[test]
fn predict_vectors_cases() {
    let u = Tensor::<f64>::from_f64([3, 2], &[1.0, 2.0, -1.0, 0.5, 0.0, 3.0]).unwrap();
    let eye = Tensor::<f64>::from_fn([3, 4, 2, 2], |i| if i % 4 == 0 || i % 4 == 3 { 1.0 } else { 0.0 });
    let uhat = predict_vectors(&u, &eye).unwrap();
    for i in 0..3 {
        for j in 0..4 {
            assert_eq!(&uhat.data()[(i * 4 + j) * 2..(i * 4 + j + 1) * 2], u.outer(i));
        }
    }
    let zero = predict_vectors(&u, &Tensor::zeros([3, 4, 2, 5])).unwrap();
    assert!(zero.data().iter().all(|&x| x == 0.0));

    // row-vector convention: [1,1] · [[1,2],[3,4]] = [4,6]
    let u = Tensor::<f64>::from_f64([1, 2], &[1.0, 1.0]).unwrap();
    let w = Tensor::<f64>::from_f64([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(predict_vectors(&u, &w).unwrap().data(), &[4.0, 6.0]);

    assert!(matches!(
        predict_vectors(&u, &Tensor::zeros([2, 1, 2, 2])),
        Err(Error::Dimension { .. })
    ));
}

#[test]
fn route_matches_oracle_on_aligned_pair() {
    // input 0 agrees with output 0; input 1 is split
    let u = Tensor::<f64>::from_f64([2, 2, 2], &[0.9, 0.1, -0.2, 0.3, 0.8, 0.2, 0.1, -0.4]).unwrap();
    let (v, state) = route(&u, 3).unwrap();
    let (ov, ocs) = routing_oracle(&nested(&u), 3);
    for j in 0..2 {
        for k in 0..2 {
            assert!((v.at(&[j, k]) - ov[j][k]).abs() < 1e-12);
        }
    }
    for (it, oc) in state.iterations.iter().zip(&ocs) {
        for i in 0..2 {
            for j in 0..2 {
                assert!((it.couplings.at(&[i, j]) - oc[i][j]).abs() < 1e-12);
            }
        }
    }
    // agreement pulls input 0 towards output 0
    assert!(state.iterations[2].couplings.at(&[0, 0]) > 0.5);
}

#[test]
fn route_matches_oracle_on_random_small_instances() {
    for seed in 0..100u64 {
        for (ni, nj, d, r) in [(1, 1, 1, 1), (3, 3, 3, 4), (2, 3, 1, 2), (3, 2, 2, 3)] {
            let u = Tensor::<f64>::from_f64([ni, nj, d], &noise(ni * nj * d, seed * 7 + r as u64)).unwrap();
            let (v, _) = route(&u, r).unwrap();
            let (ov, _) = routing_oracle(&nested(&u), r);
            for j in 0..nj {
                for k in 0..d {
                    assert!((v.at(&[j, k]) - ov[j][k]).abs() < 1e-10);
                }
            }
        }
    }
}

#[test]
fn permuting_inputs_permutes_couplings_and_keeps_outputs() {
    let (ni, nj, d) = (5, 3, 4);
    let u = Tensor::<f64>::from_f64([ni, nj, d], &noise(ni * nj * d, 99)).unwrap();
    let perm = [3, 0, 4, 1, 2];
    let mut pdata = Vec::new();
    for &p in &perm {
        pdata.extend_from_slice(u.outer(p));
    }
    let pu = Tensor::new([ni, nj, d], pdata).unwrap();
    let (v, s) = route(&u, 3).unwrap();
    let (pv, ps) = route(&pu, 3).unwrap();
    assert!(v.max_abs_diff(&pv).unwrap() < 1e-12);
    for (a, b) in s.iterations.iter().zip(&ps.iterations) {
        for (row, &p) in perm.iter().enumerate() {
            for j in 0..nj {
                assert!((b.couplings.at(&[row, j]) - a.couplings.at(&[p, j])).abs() < 1e-12);
            }
        }
    }
}

fn tiny_net(seed: u64) -> CapsNet<f64> {
    let mut net = CapsNet::zeros(CapsNetConfig::tiny()).unwrap();
    for (k, t) in net.params.tensors_mut().into_iter().enumerate() {
        let vals = noise(t.len(), seed * 100 + k as u64);
        for (x, v) in t.data_mut().iter_mut().zip(vals) {
            *x = v * 0.5;
        }
    }
    net
}

fn tiny_images(n: usize, seed: u64) -> Tensor<f64> {
    let vals: Vec<f64> = noise(n * 144, seed).iter().map(|v| (v + 1.0) / 2.0).collect();
    Tensor::from_f64([n, 1, 12, 12], &vals).unwrap()
}

#[test]
fn mnist_forward_shapes_and_norm_range() {
    let mut cfg = CapsNetConfig::mnist();
    cfg.conv1_maps = 4;
    cfg.primary_caps_types = 2;
    let mut net = CapsNet::<f32>::zeros(cfg).unwrap();
    for (k, t) in net.params.tensors_mut().into_iter().enumerate() {
        let vals = noise(t.len(), k as u64);
        for (x, v) in t.data_mut().iter_mut().zip(vals) {
            *x = v as f32 * 0.1;
        }
    }
    let images = Tensor::<f32>::from_fn([2, 1, 28, 28], |i| (i % 7) as f32 / 7.0);
    let out = net.infer(&images).unwrap();
    assert_eq!(out.digit_caps.shape(), &[2, 10, 16]);
    assert_eq!(out.norms.shape(), &[2, 10]);
    assert_eq!(out.routing.predictions.shape(), &[2, 6 * 6 * 2, 10, 16]);
    assert!(out.norms.data().iter().all(|&n| (0.0..1.0).contains(&n)));
    assert_eq!(out.routing.iterations.len(), 3);
    out.routing.check_invariants(1e-6).unwrap();
}

#[test]
fn zero_weights_predict_class_zero() {
    let net = CapsNet::<f32>::zeros(CapsNetConfig::tiny()).unwrap();
    let out = net.infer(&Tensor::full([3, 1, 12, 12], 0.5)).unwrap();
    let first = out.norms.data()[0];
    assert!(out.norms.data().iter().all(|&n| n == first));
    assert_eq!(out.predictions, vec![0, 0, 0]);
}

#[test]
fn forward_rejects_wrong_input_dims() {
    let net = CapsNet::<f32>::zeros(CapsNetConfig::tiny()).unwrap();
    assert!(matches!(net.infer(&Tensor::zeros([1, 1, 13, 12])), Err(Error::Dimension { .. })));
    assert!(net.infer(&Tensor::zeros([1, 144])).is_err());
}

#[test]
fn primary_capsules_are_type_major() {
    // A primary conv that copies channel k of conv1 output is not easy to
    // build; check the regrouping itself instead.
    let mut g = Graph::<f64>::new();
    // 2 types × dim 2, 2×3 grid
    let x = g.constant(Tensor::from_fn([1, 4, 2, 3], |i| i as f64));
    let caps = g.to_capsules(x, 2).unwrap();
    let v = g.value(caps);
    assert_eq!(v.shape(), &[1, 12, 2]);
    // capsule (type 1, row 1, col 2) = index 6 + 5; channels 2 and 3 at offset 5
    assert_eq!(v.at(&[0, 11, 0]), (2 * 6 + 5) as f64);
    assert_eq!(v.at(&[0, 11, 1]), (3 * 6 + 5) as f64);
    assert_eq!(v.at(&[0, 1, 1]), (6 + 1) as f64);
}

#[test]
fn masking() {
    let caps = Tensor::<f64>::from_fn([2, 10, 16], |i| i as f64 + 1.0);
    let m = mask_embedding(&caps, &[MaskSelect::Class(0), MaskSelect::Class(7)]).unwrap();
    assert_eq!(m.shape(), &[2, 160]);
    let row0 = m.outer(0);
    assert_eq!(&row0[..16], &caps.data()[..16]);
    assert_eq!(row0[16..].iter().sum::<f64>(), 0.0);
    assert_eq!(row0.iter().filter(|&&x| x == 0.0).count(), 144);
    let row1 = m.outer(1);
    assert_eq!(&row1[112..128], &caps.outer(1)[112..128]);
    assert_eq!(row1.iter().filter(|&&x| x == 0.0).count(), 144);

    let all = mask_embedding(&caps, &[MaskSelect::All, MaskSelect::All]).unwrap();
    assert_eq!(all.data(), caps.data());

    assert!(matches!(
        mask_embedding(&caps, &[MaskSelect::Class(10), MaskSelect::All]),
        Err(Error::Contract { .. })
    ));
}

#[test]
fn decoder_range_and_zero_weights() {
    let mut cfg = CapsNetConfig::mnist();
    cfg.conv1_maps = 2;
    cfg.primary_caps_types = 1;
    let net = CapsNet::<f32>::zeros(cfg.clone()).unwrap();
    let emb = Tensor::<f32>::from_fn([2, 160], |i| (i % 5) as f32 - 2.0);
    let out = net.decode_embeddings(&emb).unwrap();
    assert_eq!(out.shape(), &[2, 784]);
    assert!(out.data().iter().all(|&x| x == 0.5));

    let mut net = net;
    for layer in &mut net.params.decoder {
        let vals = noise(layer.weight.len(), 3);
        for (x, v) in layer.weight.data_mut().iter_mut().zip(vals) {
            *x = v as f32 * 0.05;
        }
    }
    let out = net.decode_embeddings(&emb).unwrap();
    assert!(out.data().iter().all(|&x| x > 0.0 && x < 1.0));
}

#[test]
fn mask_then_decode_is_bit_reproducible() {
    let net = tiny_net(5);
    let caps = Tensor::<f64>::from_f64([3, 2, 4], &noise(24, 8)).unwrap();
    let sel = [MaskSelect::Class(1), MaskSelect::Class(0), MaskSelect::All];
    let a = net.decode_embeddings(&mask_embedding(&caps, &sel).unwrap()).unwrap();
    let b = net.decode_embeddings(&mask_embedding(&caps, &sel).unwrap()).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn objective_decomposes_into_its_terms() {
    let net = tiny_net(2);
    let images = tiny_images(2, 4);
    let labels = [1, 0];
    let cfg = LossConfig::default();
    let mut g = Graph::new();
    let p = net.bind(&mut g, false);
    let obj = net.objective(&mut g, &p, &images, &labels, &cfg).unwrap();
    let total = g.value(obj.total).data()[0];

    let inf = net.infer(&images).unwrap();
    let margin = margin_loss(&inf.norms, &labels, &cfg).unwrap();
    let masked = mask_embedding(&inf.digit_caps, &[MaskSelect::Class(1), MaskSelect::Class(0)]).unwrap();
    let recon = net.decode_embeddings(&masked).unwrap();
    let rl = reconstruction_loss(&recon, &images.clone().reshape([2, 144]).unwrap(), &cfg).unwrap();
    assert!((total - (margin + rl)).abs() < 1e-12);
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let mut net = tiny_net(1);
    // keep every conv1 unit active so no parameter sits in a flat region
    for b in net.params.conv1.bias.data_mut() {
        *b += 1.5;
    }
    let images = tiny_images(2, 3);
    let labels = [1usize, 0];
    let cfg = LossConfig {
        recon_weight: 0.05,
        ..LossConfig::default()
    };
    let inputs: Vec<Tensor<f64>> = net.params.tensors().into_iter().cloned().collect();
    let errs = grad_check_many(
        |g, vars| {
            let p = BoundCapsNet::from_vars(vars)?;
            Ok(net.objective(g, &p, &images, &labels, &cfg)?.total)
        },
        &inputs,
        1e-5,
    )
    .unwrap();
    for ((name, _), e) in net.params.named().iter().zip(&errs) {
        assert!(*e < 1e-4, "{name}: {e}");
    }
}


use alloc::vec::Vec;

use crate::capsule::CapsNet;
use crate::data::LabeledDataset;
use crate::{Real, Result};

/// The winning capsule of one sample at one routing iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRow<T> {
    /// 1-based routing iteration.
    pub iteration: usize,
    pub truth: usize,
    /// Final predicted class; also selects which capsule is reported.
    pub predicted: usize,
    pub vector: Vec<T>,
}

/// Rows for the first `n` samples, sample-major. With `per_iteration` every
/// routing iteration contributes a row, otherwise only the last.
pub fn embedding_rows<T: Real>(
    net: &CapsNet<T>,
    ds: &LabeledDataset<T>,
    n: usize,
    per_iteration: bool,
    batch_size: usize,
) -> Result<Vec<EmbeddingRow<T>>> {
    let n = n.min(ds.len());
    let r = net.config.routing_iterations;
    let (classes, dim) = (net.config.digit_caps_count, net.config.digit_caps_dim);
    let first = if per_iteration { 0 } else { r - 1 };
    let mut rows = Vec::with_capacity(n * (r - first));
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (images, labels) = ds.gather(chunk);
        let inf = net.infer(&images)?;
        for (b, &truth) in labels.iter().enumerate() {
            let p = inf.predictions[b];
            for t in first..r {
                let v = &inf.routing.iterations[t].outputs;
                let at = (b * classes + p) * dim;
                rows.push(EmbeddingRow {
                    iteration: t + 1,
                    truth,
                    predicted: p,
                    vector: v.data()[at..at + dim].to_vec(),
                });
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capsule::CapsNetConfig;
    use crate::data::Split;
    use crate::train::{Model, ModelConfig};
    use crate::Tensor;

    #[test]
    fn rows_per_iteration_and_final_agreement() {
        let cfg = ModelConfig::CapsNet {
            net: CapsNetConfig::tiny(),
            loss: Default::default(),
        };
        let Model::CapsNet { net, .. } = Model::<f32>::init(&cfg, 2).unwrap() else {
            unreachable!()
        };
        let images = Tensor::from_fn([5, 1, 12, 12], |i| ((i * 7) % 13) as f32 / 12.0);
        let ds = LabeledDataset::new(images.clone(), alloc::vec![0, 1, 0, 1, 1], 2, "t", Split::Test).unwrap();
        let all = embedding_rows(&net, &ds, 4, true, 3).unwrap();
        assert_eq!(all.len(), 12);
        assert!(all.iter().all(|r| r.vector.len() == 4));
        assert_eq!(all.iter().map(|r| r.iteration).take(3).collect::<Vec<_>>(), [1, 2, 3]);
        let last = embedding_rows(&net, &ds, 4, false, 2).unwrap();
        assert_eq!(last.len(), 4);
        let inf = net.infer(&images).unwrap();
        for (s, row) in last.iter().enumerate() {
            assert_eq!(row.iteration, 3);
            assert_eq!(row, &all[s * 3 + 2]);
            let p = inf.predictions[s];
            assert_eq!(row.vector, &inf.digit_caps.outer(s)[p * 4..p * 4 + 4]);
        }
    }
}

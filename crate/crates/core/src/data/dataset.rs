use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::{Error, Real, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Images `[N, C, H, W]` with pixels in `[0, 1]` and one class label each.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset<T> {
    images: Tensor<T>,
    labels: Vec<usize>,
    num_classes: usize,
    pub name: String,
    pub split: Split,
}

impl<T: Real> LabeledDataset<T> {
    pub fn new(
        images: Tensor<T>,
        labels: Vec<usize>,
        num_classes: usize,
        name: impl Into<String>,
        split: Split,
    ) -> Result<Self> {
        let s = images.shape();
        if s.len() != 4 {
            return Err(Error::dim("dataset", format!("images must be [N,C,H,W], got {s:?}")));
        }
        if s[0] != labels.len() {
            return Err(Error::dim(
                "dataset",
                format!("{} images but {} labels", s[0], labels.len()),
            ));
        }
        if let Some(bad) = labels.iter().position(|&l| l >= num_classes) {
            return Err(Error::contract(
                "dataset",
                format!("label {} at index {bad} outside [0, {num_classes})", labels[bad]),
            ));
        }
        if let Some(bad) = images.data().iter().position(|&p| !(p >= T::zero() && p <= T::one())) {
            return Err(Error::contract(
                "dataset",
                format!("pixel {bad} = {} outside [0, 1]", images.data()[bad]),
            ));
        }
        Ok(LabeledDataset {
            images,
            labels,
            num_classes,
            name: name.into(),
            split,
        })
    }

    /// Scales raw bytes by 1/255. `shape` is `[N, C, H, W]`.
    pub fn from_bytes(
        shape: [usize; 4],
        pixels: &[u8],
        labels: Vec<usize>,
        num_classes: usize,
        name: impl Into<String>,
        split: Split,
    ) -> Result<Self> {
        let scale = T::lit(255.0);
        let data = pixels.iter().map(|&b| T::lit(b as f64) / scale).collect();
        Self::new(Tensor::new(shape, data)?, labels, num_classes, name, split)
    }

    /// Pixels quantised back to bytes: `round(p · 255)`.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.images
            .data()
            .iter()
            .map(|p| num_traits::Float::round(p.as_f64() * 255.0).clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor<T> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// `[C, H, W]`
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    /// Image `i` as a `[C, H, W]` tensor.
    pub fn image(&self, i: usize) -> Tensor<T> {
        Tensor::new(self.image_shape(), self.images.outer(i).to_vec()).expect("image shape")
    }

    /// Images and labels at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let images = self.images.select_outer(indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (images, labels)
    }

    /// The first `n` samples (all of them if `n` is larger).
    pub fn take(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        let (images, labels) = self.gather(&idx);
        LabeledDataset {
            images,
            labels,
            num_classes: self.num_classes,
            name: self.name.clone(),
            split: self.split,
        }
    }

    /// Same labels and metadata with new pixels of the same shape.
    pub fn with_images(&self, images: Tensor<T>) -> Result<Self> {
        if images.shape() != self.images.shape() {
            return Err(Error::dim(
                "dataset",
                format!("expected {:?}, got {:?}", self.images.shape(), images.shape()),
            ));
        }
        Self::new(images, self.labels.clone(), self.num_classes, self.name.clone(), self.split)
    }

    /// Number of samples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = alloc::vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn validates_inputs() {
        let img = Tensor::<f32>::zeros([2, 1, 2, 2]);
        assert!(LabeledDataset::new(img.clone(), vec![0], 10, "x", Split::Train).is_err());
        assert!(LabeledDataset::new(img.clone(), vec![0, 10], 10, "x", Split::Train).is_err());
        let mut bright = img.clone();
        bright.data_mut()[3] = 1.5;
        assert!(LabeledDataset::new(bright, vec![0, 1], 10, "x", Split::Train).is_err());
        let ds = LabeledDataset::new(img, vec![3, 1], 10, "x", Split::Test).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.class_counts()[3], 1);
    }

    #[test]
    fn bytes_round_trip() {
        let bytes: Vec<u8> = (0..=255).collect();
        let ds =
            LabeledDataset::<f32>::from_bytes([4, 1, 8, 8], &bytes, vec![0, 1, 2, 3], 4, "ramp", Split::Train).unwrap();
        assert_eq!(ds.images().data()[255], 1.0);
        assert_eq!(ds.to_bytes(), bytes);
        let (imgs, labels) = ds.gather(&[2, 0]);
        assert_eq!(labels, [2, 0]);
        assert_eq!(imgs.outer(0), ds.images().outer(2));
        assert_eq!(ds.take(10).len(), 4);
        assert_eq!(ds.image(3).shape(), &[1, 8, 8]);
    }

    #[test]
    fn empty_dataset_is_allowed() {
        let ds = LabeledDataset::<f32>::from_bytes([0, 3, 32, 32], &[], vec![], 10, "e", Split::Test).unwrap();
        assert!(ds.is_empty());
    }
}

use ndarray::{Array2, Axis};

use crate::fusion::ImageVariant;

/// Base embeddings for a set of samples, one row per sample, in a fixed
/// order shared by every field.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedDataset {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub text: Option<Array2<f64>>,
    pub image: Option<Array2<f64>>,
    pub image_text_removed: Option<Array2<f64>>,
}

impl EmbeddedDataset {
    /// One unlabeled sample. The image row serves both image variants.
    pub fn single(image: Option<&[f64]>, text: Option<&[f64]>, num_classes: usize) -> Self {
        let row = |v: &[f64]| Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row shape");
        let image = image.map(row);
        Self {
            ids: vec![String::new()],
            labels: vec![0],
            num_classes,
            text: text.map(row),
            image_text_removed: image.clone(),
            image,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_for(&self, variant: ImageVariant) -> Option<&Array2<f64>> {
        match variant {
            ImageVariant::Original => self.image.as_ref(),
            ImageVariant::TextRemoved => self.image_text_removed.as_ref(),
        }
    }

    /// Rows `indices`, in that order; repeats allowed.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let pick = |a: &Option<Array2<f64>>| a.as_ref().map(|a| a.select(Axis(0), indices));
        Self {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            text: pick(&self.text),
            image: pick(&self.image),
            image_text_removed: pick(&self.image_text_removed),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        crate::corpus::class_counts(&self.labels, self.num_classes)
    }
}

use serde::{Deserialize, Serialize};

use super::auc::oriented_auc;
use super::dataset::LabeledDataset;
use crate::error::Result;

/// One input coordinate used directly as the score, sign-flipped when
/// `orientation` is -1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleFeature {
    pub index: usize,
    pub orientation: i8,
    pub train_auc: f64,
}

impl SingleFeature {
    pub fn score(&self, x: &[f32]) -> f32 {
        self.orientation as f32 * x[self.index]
    }
}

pub fn column(ds: &LabeledDataset, j: usize) -> Vec<f32> {
    (0..ds.len()).map(|i| ds.row(i)[j]).collect()
}

/// Feature with the highest oriented AUC on `train`; ties go to the lowest index.
pub fn best_single_feature(train: &LabeledDataset) -> Result<SingleFeature> {
    let mut best: Option<SingleFeature> = None;
    for j in 0..train.dim() {
        let (auc, orientation) = oriented_auc(&column(train, j), train.labels())?;
        if best.map_or(true, |b| auc > b.train_auc) {
            best = Some(SingleFeature {
                index: j,
                orientation,
                train_auc: auc,
            });
        }
    }
    Ok(best.expect("datasets have at least one feature"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use crate::probe::dataset::{InputSource, SourceTag, Variant};

    fn ds(cols: &[Vec<f32>], labels: Vec<u8>) -> LabeledDataset {
        let n = labels.len();
        let data = (0..n)
            .flat_map(|i| cols.iter().map(move |c| c[i]))
            .collect();
        let tag = SourceTag {
            input: InputSource::Activations,
            variant: Variant::Penalized,
        };
        LabeledDataset::new(tag, Tensor::new(vec![n, cols.len()], data).unwrap(), labels).unwrap()
    }

    #[test]
    fn label_column_is_selected_with_positive_orientation() {
        let labels = vec![0, 1, 1, 0, 1];
        let d = ds(
            &[
                vec![0.3, 0.1, 0.9, 0.2, 0.5],
                labels.iter().map(|&l| l as f32).collect(),
            ],
            labels,
        );
        let s = best_single_feature(&d).unwrap();
        assert_eq!((s.index, s.orientation, s.train_auc), (1, 1, 1.0));
    }

    #[test]
    fn anti_label_column_is_selected_flipped() {
        let labels = vec![0, 1, 1, 0, 1];
        let anti = labels.iter().map(|&l| 1.0 - l as f32).collect();
        let d = ds(&[vec![0.3, 0.1, 0.9, 0.2, 0.5], anti], labels);
        let s = best_single_feature(&d).unwrap();
        assert_eq!((s.index, s.orientation, s.train_auc), (1, -1, 1.0));
        assert!(s.score(d.row(1)) > s.score(d.row(0)));
    }
}

//! Fitted probes with an optional dimensionality-reduction front end, and their
//! checkpoint form (the weight container with kind `probe`).

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::kmeans::ClusterLabeler;
use super::nmf::Nmf;
use super::nn_probe::{NnProbe, Standardizer};
use super::pca::Pca;
use super::single::SingleFeature;
use crate::error::{Error, Result};
use crate::nn::checkpoint::{network_container, network_from_container, Container};
use crate::nn::{LayerSpec, Tensor};

pub const PROBE_KIND: &str = "probe";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReductionKind {
    Pca,
    Nmf,
}

impl ReductionKind {
    pub const ALL: [ReductionKind; 2] = [ReductionKind::Pca, ReductionKind::Nmf];

    pub fn as_str(self) -> &'static str {
        match self {
            ReductionKind::Pca => "pca",
            ReductionKind::Nmf => "nmf",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReductionModel {
    Pca(Pca<f32>),
    Nmf(Nmf<f32>),
}

impl ReductionModel {
    pub fn kind(&self) -> ReductionKind {
        match self {
            ReductionModel::Pca(_) => ReductionKind::Pca,
            ReductionModel::Nmf(_) => ReductionKind::Nmf,
        }
    }

    pub fn k(&self) -> usize {
        match self {
            ReductionModel::Pca(p) => p.k(),
            ReductionModel::Nmf(n) => n.k,
        }
    }

    /// Flattens any sample shape before projecting.
    pub fn apply(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let flat = Tensor::new(vec![x.batch(), x.sample_len()], x.data().to_vec())?;
        match self {
            ReductionModel::Pca(p) => p.apply_batch(&flat),
            ReductionModel::Nmf(n) => n.apply_batch(&flat),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Predictor {
    Single(SingleFeature),
    Network(NnProbe),
    Cluster(ClusterLabeler),
}

impl Predictor {
    pub fn kind(&self) -> &'static str {
        match self {
            Predictor::Single(_) => "single_feature",
            Predictor::Network(p)
                if p.network
                    .spec()
                    .layers
                    .iter()
                    .any(|l| matches!(l, LayerSpec::Conv2d { .. })) =>
            {
                "conv_nn"
            }
            Predictor::Network(_) => "dense_nn",
            Predictor::Cluster(_) => "cluster_labeler",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProbeModel {
    pub reduction: Option<ReductionModel>,
    pub predictor: Predictor,
}

impl ProbeModel {
    pub fn new(predictor: Predictor) -> Self {
        Self {
            reduction: None,
            predictor,
        }
    }

    pub fn with_reduction(reduction: ReductionModel, predictor: Predictor) -> Self {
        Self {
            reduction: Some(reduction),
            predictor,
        }
    }

    /// One real score per sample; higher means more likely labeled 1.
    pub fn score(&self, x: &Tensor<f32>) -> Result<Vec<f32>> {
        let reduced;
        let input = match &self.reduction {
            Some(r) => {
                reduced = r.apply(x)?;
                &reduced
            }
            None => x,
        };
        match &self.predictor {
            Predictor::Single(s) => {
                if s.index >= input.sample_len() {
                    return Err(Error::Shape(format!(
                        "feature {} out of range for d={}",
                        s.index,
                        input.sample_len()
                    )));
                }
                Ok((0..input.batch()).map(|i| s.score(input.row(i))).collect())
            }
            Predictor::Network(p) => p.score(input),
            Predictor::Cluster(c) => Ok(c.score_batch(input)),
        }
    }

    pub fn to_container(&self) -> Result<Container> {
        let reduction = serde_json::to_value(&self.reduction)?;
        let kind = self.predictor.kind();
        Ok(match &self.predictor {
            Predictor::Network(p) => network_container(
                &p.network,
                PROBE_KIND,
                json!({
                    "probe_kind": kind,
                    "reduction": reduction,
                    "standardizer": p.standardizer,
                    "best_eval_auc": p.best_eval_auc,
                    "best_epoch": p.best_epoch,
                    "epochs_run": p.epochs_run,
                }),
            ),
            Predictor::Single(s) => Container {
                kind: PROBE_KIND.into(),
                header: json!({ "probe_kind": kind, "reduction": reduction, "single": s }),
                arrays: Vec::new(),
            },
            Predictor::Cluster(c) => Container {
                kind: PROBE_KIND.into(),
                header: json!({ "probe_kind": kind, "reduction": reduction, "cluster": c }),
                arrays: Vec::new(),
            },
        })
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != PROBE_KIND {
            return Err(Error::Format(format!(
                "expected a probe container, found `{}`",
                c.kind
            )));
        }
        let field = |name: &str| -> Result<Value> {
            c.header
                .get(name)
                .cloned()
                .ok_or_else(|| Error::Format(format!("probe header lacks `{name}`")))
        };
        let reduction: Option<ReductionModel> = serde_json::from_value(field("reduction")?)?;
        let kind: String = serde_json::from_value(field("probe_kind")?)?;
        let predictor = match kind.as_str() {
            "single_feature" => Predictor::Single(serde_json::from_value(field("single")?)?),
            "cluster_labeler" => Predictor::Cluster(serde_json::from_value(field("cluster")?)?),
            "dense_nn" | "conv_nn" => {
                let standardizer: Option<Standardizer> =
                    serde_json::from_value(field("standardizer")?)?;
                Predictor::Network(NnProbe {
                    network: network_from_container(c)?,
                    standardizer,
                    best_eval_auc: serde_json::from_value(field("best_eval_auc")?)?,
                    best_epoch: serde_json::from_value(field("best_epoch")?)?,
                    epochs_run: serde_json::from_value(field("epochs_run")?)?,
                })
            }
            other => return Err(Error::Format(format!("unknown probe kind `{other}`"))),
        };
        Ok(Self {
            reduction,
            predictor,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(self.to_container()?.to_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_container(&Container::from_bytes(bytes)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::dataset::{InputSource, LabeledDataset, SourceTag, Variant};
    use crate::probe::nn_probe::{train_nn_probe, NnProbeHyperparams};
    use crate::probe::pca::fit_pca;

    fn data() -> LabeledDataset {
        let x: Vec<f32> = (0..40)
            .flat_map(|i| [i as f32 * 0.1, (i % 2) as f32, 1.0 - (i % 3) as f32])
            .collect();
        let labels = (0..40).map(|i| (i % 2) as u8).collect();
        let tag = SourceTag {
            input: InputSource::Activations,
            variant: Variant::Penalized,
        };
        LabeledDataset::new(tag, Tensor::new(vec![40, 3], x).unwrap(), labels).unwrap()
    }

    #[test]
    fn network_probe_with_pca_round_trips() {
        let d = data();
        let pca = fit_pca(d.features(), 2).unwrap();
        let red = ReductionModel::Pca(pca);
        let reduced = d
            .with_features(d.tag(), red.apply(d.features()).unwrap())
            .unwrap();
        let hp = NnProbeHyperparams {
            max_epochs: 5,
            ..Default::default()
        };
        let p = train_nn_probe(&reduced, &reduced, &hp, 1).unwrap();
        let model = ProbeModel::with_reduction(red, Predictor::Network(p));
        let back = ProbeModel::from_bytes(&model.to_bytes().unwrap()).unwrap();
        assert_eq!(
            model.score(d.features()).unwrap(),
            back.score(d.features()).unwrap()
        );
        assert_eq!(back.predictor.kind(), "dense_nn");
    }

    #[test]
    fn single_feature_round_trips() {
        let s = SingleFeature {
            index: 1,
            orientation: -1,
            train_auc: 1.0,
        };
        let model = ProbeModel::new(Predictor::Single(s));
        let back = ProbeModel::from_bytes(&model.to_bytes().unwrap()).unwrap();
        let d = data();
        assert_eq!(
            model.score(d.features()).unwrap(),
            back.score(d.features()).unwrap()
        );
    }

    #[test]
    fn other_container_kinds_are_rejected() {
        let c = Container {
            kind: "network".into(),
            header: json!({}),
            arrays: vec![],
        };
        assert!(matches!(
            ProbeModel::from_container(&c),
            Err(Error::Format(_))
        ));
    }
}

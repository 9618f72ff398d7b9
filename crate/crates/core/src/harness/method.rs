use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::probe::{InputSource, NnProbeHyperparams, ReductionKind, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Nn,
    Single,
    ReduceNn,
    ReduceSingle,
    ClusterMajority,
}

impl Method {
    /// Table columns, in order.
    pub const COLUMNS: [Method; 4] = [
        Method::Nn,
        Method::Single,
        Method::ReduceNn,
        Method::ReduceSingle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Nn => "nn",
            Method::Single => "single",
            Method::ReduceNn => "reduce_nn",
            Method::ReduceSingle => "reduce_single",
            Method::ClusterMajority => "cluster_majority",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Method::Nn => "NN",
            Method::Single => "Single",
            Method::ReduceNn => "Reduce + NN",
            Method::ReduceSingle => "Reduce + Single",
            Method::ClusterMajority => "Cluster",
        }
    }

    pub fn reduces(self) -> bool {
        matches!(self, Method::ReduceNn | Method::ReduceSingle)
    }
}

/// One cell of the results grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MethodSpec {
    pub input: InputSource,
    pub variant: Variant,
    pub method: Method,
    /// Fixed reduction for reduce methods; `None` searches both kinds.
    pub reduction: Option<ReductionKind>,
}

impl MethodSpec {
    pub fn new(input: InputSource, variant: Variant, method: Method) -> Self {
        Self {
            input,
            variant,
            method,
            reduction: None,
        }
    }

    /// File-name friendly identifier.
    pub fn key(&self) -> String {
        let mut k = format!(
            "{}-{}-{}",
            self.input.as_str(),
            self.variant.as_str(),
            self.method.as_str()
        );
        if let Some(r) = self.reduction {
            k.push('-');
            k.push_str(r.as_str());
        }
        k
    }
}

/// A table row: input source and env variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridRow {
    pub input: InputSource,
    pub variant: Variant,
}

impl GridRow {
    pub const ALL: [GridRow; 6] = [
        GridRow {
            input: InputSource::Activations,
            variant: Variant::Penalized,
        },
        GridRow {
            input: InputSource::Image,
            variant: Variant::Penalized,
        },
        GridRow {
            input: InputSource::QValues,
            variant: Variant::Penalized,
        },
        GridRow {
            input: InputSource::Activations,
            variant: Variant::NoPenalty,
        },
        GridRow {
            input: InputSource::Image,
            variant: Variant::NoPenalty,
        },
        GridRow {
            input: InputSource::AutoencoderCode,
            variant: Variant::Penalized,
        },
    ];

    pub fn title(&self) -> String {
        let base = match self.input {
            InputSource::Activations => "Activations",
            InputSource::Image => "Image",
            InputSource::QValues => "Q values",
            InputSource::AutoencoderCode => "Autoencoder",
        };
        match self.variant {
            Variant::NoPenalty => format!("{base} (no penalty)"),
            Variant::Penalized => base.to_string(),
        }
    }

    /// Whether the table evaluates `method` on this row.
    pub fn evaluates(&self, method: Method) -> bool {
        match (self.input, method) {
            (_, Method::ClusterMajority) => self.input == InputSource::Activations,
            (InputSource::Activations, _) => true,
            (InputSource::Image, m) => m != Method::Single,
            (InputSource::QValues, m) => matches!(m, Method::Nn | Method::Single),
            (InputSource::AutoencoderCode, m) => m == Method::Nn,
        }
    }
}

/// Every non-N/A cell of the default grid, row-major; clustering cells only on request.
pub fn default_grid(include_clustering: bool) -> Vec<MethodSpec> {
    let mut methods = Method::COLUMNS.to_vec();
    if include_clustering {
        methods.push(Method::ClusterMajority);
    }
    GridRow::ALL
        .iter()
        .flat_map(|row| {
            methods
                .iter()
                .filter(|&&m| row.evaluates(m))
                .map(|&m| MethodSpec::new(row.input, row.variant, m))
                .collect::<Vec<_>>()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ReductionChoice {
    pub kind: ReductionKind,
    pub k: usize,
}

/// One point of a method's search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodHyperparams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduction: Option<ReductionChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nn: Option<NnProbeHyperparams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clusters: Option<usize>,
}

/// Candidate values the random search draws from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSpace {
    pub reduction_k: Vec<usize>,
    pub hidden: Vec<Vec<usize>>,
    pub conv_channels: Vec<Vec<usize>>,
    /// Learning rates are log-uniform between these bounds.
    pub learning_rate: [f64; 2],
    pub batch_size: Vec<usize>,
    pub patience: Vec<usize>,
    pub max_epochs: usize,
    pub clusters: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            reduction_k: vec![2, 4, 8, 16],
            hidden: vec![vec![16], vec![32], vec![64], vec![32, 16], vec![64, 32]],
            conv_channels: vec![vec![8], vec![16], vec![8, 16]],
            learning_rate: [3e-4, 1e-2],
            batch_size: vec![8, 16, 32],
            patience: vec![5, 10, 20],
            max_epochs: 100,
            clusters: vec![2, 4, 8, 16],
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> crate::Result<()> {
        let empty = self.reduction_k.is_empty()
            || self.hidden.is_empty()
            || self.conv_channels.is_empty()
            || self.batch_size.is_empty()
            || self.patience.is_empty()
            || self.clusters.is_empty();
        if empty {
            return Err(crate::Error::Config(
                "search space lists must be non-empty".into(),
            ));
        }
        let [lo, hi] = self.learning_rate;
        if !(lo > 0.0 && hi >= lo) {
            return Err(crate::Error::Config(
                "search learning_rate bounds must satisfy 0 < lo <= hi".into(),
            ));
        }
        if self.max_epochs == 0
            || self.batch_size.contains(&0)
            || self.reduction_k.contains(&0)
            || self.clusters.iter().any(|&k| k < 2)
        {
            return Err(crate::Error::Config(
                "search sizes must be positive and cluster counts at least 2".into(),
            ));
        }
        Ok(())
    }

    /// Draw one configuration for `spec`. Image inputs without a reduction get
    /// a convolutional front end.
    pub fn sample<R: Rng + ?Sized>(&self, spec: &MethodSpec, rng: &mut R) -> MethodHyperparams {
        let reduction = spec.method.reduces().then(|| ReductionChoice {
            kind: spec
                .reduction
                .unwrap_or_else(|| *ReductionKind::ALL.choose(rng).expect("two kinds")),
            k: *self.reduction_k.choose(rng).expect("non-empty"),
        });
        let nn = matches!(spec.method, Method::Nn | Method::ReduceNn).then(|| {
            let conv = spec.input == InputSource::Image && reduction.is_none();
            let [lo, hi] = self.learning_rate;
            NnProbeHyperparams {
                hidden: self.hidden.choose(rng).expect("non-empty").clone(),
                conv_channels: if conv {
                    self.conv_channels.choose(rng).expect("non-empty").clone()
                } else {
                    Vec::new()
                },
                learning_rate: (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp(),
                batch_size: *self.batch_size.choose(rng).expect("non-empty"),
                max_epochs: self.max_epochs,
                patience: *self.patience.choose(rng).expect("non-empty"),
            }
        });
        let clusters = (spec.method == Method::ClusterMajority)
            .then(|| *self.clusters.choose(rng).expect("non-empty"));
        MethodHyperparams {
            reduction,
            nn,
            clusters,
        }
    }
}

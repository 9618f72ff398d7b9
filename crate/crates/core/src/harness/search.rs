use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::method::{Method, MethodHyperparams, MethodSpec, ReductionChoice, SearchSpace};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::probe::{
    auc, best_single_feature, cluster_majority, train_nn_probe, LabeledDataset, Predictor,
    ProbeModel, ReductionModel,
};
use crate::seed::derive_seed;
use crate::stats::mean_std;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSettings {
    pub n_configs: usize,
    pub splits: usize,
    pub train_size: usize,
    pub eval_size: usize,
    pub final_runs: usize,
    pub final_eval_size: usize,
    /// Early-stopping split for network probes in the final evaluation, drawn
    /// apart from the reported validation split.
    pub final_stop_size: usize,
    pub space: SearchSpace,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            n_configs: 30,
            splits: 4,
            train_size: 50,
            eval_size: 100,
            final_runs: 10,
            final_eval_size: 500,
            final_stop_size: 100,
            space: SearchSpace::default(),
        }
    }
}

impl SearchSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_configs == 0 || self.splits == 0 || self.final_runs == 0 {
            return Err(Error::Config(
                "search n_configs, splits and final_runs must be positive".into(),
            ));
        }
        if self.train_size < 2
            || self.eval_size < 2
            || self.final_eval_size < 2
            || self.final_stop_size < 2
        {
            return Err(Error::Config(
                "every split needs at least two samples".into(),
            ));
        }
        self.space.validate()
    }

    /// Labeled samples one final-evaluation run consumes.
    pub fn final_pool_need(&self) -> usize {
        self.train_size + self.final_stop_size + self.final_eval_size
    }
}

/// Everything a cell's trials read: the labeled pool, its reduced versions and
/// (for clustering) unlabeled features.
#[derive(Debug, Clone)]
pub struct CellData {
    pub labeled: LabeledDataset,
    /// Each reduction with the labeled pool mapped through it.
    pub reductions: BTreeMap<ReductionChoice, (ReductionModel, LabeledDataset)>,
    pub unlabeled: Option<Tensor<f32>>,
}

impl CellData {
    pub fn new(labeled: LabeledDataset) -> Self {
        Self {
            labeled,
            reductions: BTreeMap::new(),
            unlabeled: None,
        }
    }

    fn view(&self, hp: &MethodHyperparams) -> Result<(&LabeledDataset, Option<&ReductionModel>)> {
        match hp.reduction {
            None => Ok((&self.labeled, None)),
            Some(choice) => self
                .reductions
                .get(&choice)
                .map(|(m, d)| (d, Some(m)))
                .ok_or_else(|| {
                    Error::Contract(format!(
                        "no {} reduction with k = {} was prepared",
                        choice.kind.as_str(),
                        choice.k
                    ))
                }),
        }
    }

    /// Same features with labels permuted by `seed`; reductions are label-free
    /// and carried over with the same permutation.
    pub fn label_shuffled(&self, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let perm = sample(&mut rng, self.labeled.len(), self.labeled.len()).into_vec();
        let labels: Vec<u8> = perm.iter().map(|&i| self.labeled.labels()[i]).collect();
        let mut reductions = BTreeMap::new();
        for (choice, (model, ds)) in &self.reductions {
            reductions.insert(*choice, (model.clone(), ds.relabeled(labels.clone())?));
        }
        Ok(Self {
            labeled: self.labeled.relabeled(labels)?,
            reductions,
            unlabeled: self.unlabeled.clone(),
        })
    }
}

/// Disjoint index sets of the given sizes drawn uniformly from `0..n`.
pub fn disjoint_split(n: usize, sizes: &[usize], rng: &mut ChaCha8Rng) -> Result<Vec<Vec<usize>>> {
    let need: usize = sizes.iter().sum();
    if need > n {
        return Err(Error::Contract(format!(
            "splits need {need} samples but the pool holds {n}"
        )));
    }
    let drawn = sample(rng, n, need).into_vec();
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &s in sizes {
        out.push(drawn[start..start + s].to_vec());
        start += s;
    }
    Ok(out)
}

/// Train ∩ eval must be empty; checked on every split the protocol draws.
pub fn ensure_disjoint(sets: &[&[usize]]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for set in sets {
        for &i in *set {
            if !seen.insert(i) {
                return Err(Error::Contract(format!("sample {i} appears in two splits")));
            }
        }
    }
    Ok(())
}

/// Fit the method on `train`, early-stopping network probes on `stop`.
pub fn fit_probe(
    spec: &MethodSpec,
    hp: &MethodHyperparams,
    data: &CellData,
    train: &[usize],
    stop: &[usize],
    seed: u64,
) -> Result<ProbeModel> {
    let (ds, reduction) = data.view(hp)?;
    let train_ds = ds.subset(train)?;
    let predictor = match spec.method {
        Method::Nn | Method::ReduceNn => {
            let nn = hp.nn.as_ref().ok_or_else(|| {
                Error::Contract("network method without network hyperparameters".into())
            })?;
            Predictor::Network(train_nn_probe(&train_ds, &ds.subset(stop)?, nn, seed)?)
        }
        Method::Single | Method::ReduceSingle => Predictor::Single(best_single_feature(&train_ds)?),
        Method::ClusterMajority => {
            let k = hp
                .clusters
                .ok_or_else(|| Error::Contract("clustering without a cluster count".into()))?;
            let unlabeled = data
                .unlabeled
                .as_ref()
                .ok_or_else(|| Error::Contract("clustering needs unlabeled features".into()))?;
            Predictor::Cluster(cluster_majority(unlabeled, k, &train_ds, seed)?)
        }
    };
    Ok(ProbeModel {
        reduction: reduction.cloned(),
        predictor,
    })
}

/// AUC on `eval` of a probe fitted on `train`. Features are scored in the
/// space the probe was fitted in, so reductions are not applied twice.
pub fn split_auc(
    spec: &MethodSpec,
    hp: &MethodHyperparams,
    data: &CellData,
    train: &[usize],
    stop: &[usize],
    eval: &[usize],
    seed: u64,
) -> Result<f64> {
    ensure_disjoint(&[train, eval])?;
    ensure_disjoint(&[train, stop])?;
    let model = fit_probe(spec, hp, data, train, stop, seed)?;
    let (ds, _) = data.view(hp)?;
    let eval_ds = ds.subset(eval)?;
    let bare = ProbeModel {
        reduction: None,
        predictor: model.predictor,
    };
    auc(&bare.score(eval_ds.features())?, eval_ds.labels())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
    pub auc: f64,
    /// Draws needed; a split whose AUC was undefined is redrawn once.
    pub attempts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub spec: MethodSpec,
    pub index: usize,
    pub hyperparams: MethodHyperparams,
    pub splits: Vec<SplitRecord>,
    pub split_aucs: Vec<f64>,
    /// Arithmetic mean of `split_aucs`; absent when the trial failed.
    pub mean_auc: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: MethodHyperparams,
    pub best_index: usize,
    pub trials: Vec<TrialResult>,
}

/// Run `attempt` on a fresh split; an undefined AUC gets one redraw.
fn with_redraw<F>(mut attempt: F) -> Result<(f64, Vec<Vec<usize>>, usize)>
where
    F: FnMut() -> Result<(f64, Vec<Vec<usize>>)>,
{
    match attempt() {
        Ok((a, s)) => Ok((a, s, 1)),
        Err(Error::UndefinedAuc(_)) => attempt().map(|(a, s)| (a, s, 2)),
        Err(e) => Err(e),
    }
}

/// Distinct configurations drawn from the method's space, in draw order.
pub fn sample_configs(
    spec: &MethodSpec,
    space: &SearchSpace,
    n: usize,
    seed: u64,
) -> Vec<MethodHyperparams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<MethodHyperparams> = Vec::with_capacity(n);
    for _ in 0..n {
        let hp = space.sample(spec, &mut rng);
        if !out.contains(&hp) {
            out.push(hp);
        }
    }
    out
}

/// Random search: every configuration is scored by its mean eval AUC over
/// `splits` disjoint train/eval draws; the best mean wins, ties to the first drawn.
pub fn random_search(
    spec: &MethodSpec,
    data: &CellData,
    settings: &SearchSettings,
    seed: u64,
) -> Result<SearchOutcome> {
    settings.validate()?;
    let configs = sample_configs(
        spec,
        &settings.space,
        settings.n_configs,
        derive_seed(seed, "configs"),
    );
    let n = data.labeled.len();
    let mut trials = Vec::with_capacity(configs.len());
    for (index, hp) in configs.into_iter().enumerate() {
        let mut splits = Vec::new();
        let mut error = None;
        for s in 0..settings.splits {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("trial/{index}/split/{s}")));
            let fit_seed = derive_seed(seed, &format!("trial/{index}/fit/{s}"));
            let outcome = with_redraw(|| {
                let sets = disjoint_split(n, &[settings.train_size, settings.eval_size], &mut rng)?;
                let a = split_auc(spec, &hp, data, &sets[0], &sets[1], &sets[1], fit_seed)?;
                Ok((a, sets))
            });
            match outcome {
                Ok((a, mut sets, attempts)) => {
                    let eval = sets.pop().expect("two sets");
                    let train = sets.pop().expect("two sets");
                    splits.push(SplitRecord {
                        train,
                        eval,
                        auc: a,
                        attempts,
                    });
                }
                Err(e) => {
                    error = Some(format!("split {s}: {e}"));
                    break;
                }
            }
        }
        let split_aucs: Vec<f64> = splits.iter().map(|r| r.auc).collect();
        let mean_auc = error
            .is_none()
            .then(|| split_aucs.iter().sum::<f64>() / split_aucs.len() as f64);
        trials.push(TrialResult {
            spec: *spec,
            index,
            hyperparams: hp,
            splits,
            split_aucs,
            mean_auc,
            error,
        });
    }
    let mut best: Option<(usize, f64)> = None;
    for t in &trials {
        if let Some(m) = t.mean_auc {
            if best.map_or(true, |(_, b)| m > b) {
                best = Some((t.index, m));
            }
        }
    }
    let (best_index, _) = best.ok_or_else(|| {
        let first = trials
            .iter()
            .find_map(|t| t.error.clone())
            .unwrap_or_default();
        Error::Training(format!(
            "every search trial failed for {}; first failure: {first}",
            spec.key()
        ))
    })?;
    Ok(SearchOutcome {
        best: trials[best_index].hyperparams.clone(),
        best_index,
        trials,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalResult {
    pub spec: MethodSpec,
    pub hyperparams: MethodHyperparams,
    pub run_aucs: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation of `run_aucs`.
    pub std: f64,
}

/// Retrain the chosen configuration `final_runs` times on fresh disjoint
/// train/validation draws and summarize the validation AUCs.
pub fn final_evaluation(
    spec: &MethodSpec,
    data: &CellData,
    hp: &MethodHyperparams,
    settings: &SearchSettings,
    seed: u64,
) -> Result<FinalResult> {
    settings.validate()?;
    let n = data.labeled.len();
    let uses_stop = matches!(spec.method, Method::Nn | Method::ReduceNn);
    let mut run_aucs = Vec::with_capacity(settings.final_runs);
    for r in 0..settings.final_runs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("final/{r}/split")));
        let fit_seed = derive_seed(seed, &format!("final/{r}/fit"));
        let (a, _, _) = with_redraw(|| {
            let sizes: Vec<usize> = if uses_stop {
                vec![
                    settings.train_size,
                    settings.final_eval_size,
                    settings.final_stop_size,
                ]
            } else {
                vec![settings.train_size, settings.final_eval_size]
            };
            let sets = disjoint_split(n, &sizes, &mut rng)?;
            let stop = if uses_stop { &sets[2] } else { &sets[1] };
            ensure_disjoint(&[&sets[0], &sets[1], if uses_stop { &sets[2] } else { &[] }])?;
            Ok((
                split_auc(spec, hp, data, &sets[0], stop, &sets[1], fit_seed)?,
                sets,
            ))
        })
        .map_err(|e| Error::Training(format!("final run {r} of {}: {e}", spec.key())))?;
        run_aucs.push(a);
    }
    let (mean, std) = mean_std(&run_aucs);
    Ok(FinalResult {
        spec: *spec,
        hyperparams: hp.clone(),
        run_aucs,
        mean,
        std,
    })
}

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::collect::{collect_states, features, labeled_dataset, variant_of, CollectionSettings};
use super::method::{
    default_grid, GridRow, Method, MethodHyperparams, MethodSpec, ReductionChoice,
};
use super::search::{final_evaluation, random_search, CellData, SearchSettings, TrialResult};
use crate::dqn::TrainedAgent;
use crate::env::GridWorld;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::nn::Tensor;
use crate::probe::{
    fit_nmf_shifted, fit_pca, Autoencoder, InputSource, LabeledDataset, ReductionKind,
    ReductionModel, SourceTag, Variant,
};
use crate::seed::derive_seed;
use crate::stats::mean_std;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSettings {
    /// Adds the k-means majority-vote column on activation rows.
    pub include_clustering: bool,
    /// Unlabeled states per agent for unsupervised fits.
    pub unlabeled_size: usize,
    /// Labeled states per agent, disjoint from the unlabeled pool.
    pub labeled_size: usize,
    /// Unlabeled images used to fit pixel-space reductions.
    pub image_fit_rows: usize,
    pub nmf_iterations: usize,
    pub autoencoder_inits: usize,
    /// Agents per variant whose cells are averaged.
    pub agents_per_cell: usize,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self {
            include_clustering: false,
            unlabeled_size: 20_000,
            labeled_size: 3_000,
            image_fit_rows: 2_000,
            nmf_iterations: 200,
            autoencoder_inits: 4,
            agents_per_cell: 4,
        }
    }
}

impl GridSettings {
    pub fn validate(&self, search: &SearchSettings) -> Result<()> {
        if self.agents_per_cell == 0 || self.autoencoder_inits == 0 {
            return Err(Error::Config(
                "grid agents_per_cell and autoencoder_inits must be positive".into(),
            ));
        }
        if self.labeled_size < search.final_pool_need()
            || self.labeled_size < search.train_size + search.eval_size
        {
            return Err(Error::Config(format!(
                "grid labeled_size {} cannot hold disjoint final splits of {} samples",
                self.labeled_size,
                search.final_pool_need()
            )));
        }
        let max_k = search.space.reduction_k.iter().copied().max().unwrap_or(0);
        if self.image_fit_rows < max_k || self.unlabeled_size < self.image_fit_rows.max(max_k) {
            return Err(Error::Config("grid unlabeled_size must cover image_fit_rows, which must cover the largest reduction k".into()));
        }
        if self.nmf_iterations == 0 {
            return Err(Error::Config("grid nmf_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// One agent's collected data.
#[derive(Debug, Clone)]
pub struct AgentData {
    pub agent_id: String,
    pub variant: Variant,
    pub labeled_activations: LabeledDataset,
    pub labeled_images: LabeledDataset,
    pub labeled_q_values: LabeledDataset,
    /// Unlabeled-pool features; their labels are never read.
    pub unlabeled_activations: LabeledDataset,
    pub unlabeled_images: LabeledDataset,
}

impl AgentData {
    /// Named datasets for persistence, in a fixed order.
    pub fn datasets(&self) -> [(&'static str, &LabeledDataset); 5] {
        [
            ("labeled-activations", &self.labeled_activations),
            ("labeled-image", &self.labeled_images),
            ("labeled-q_values", &self.labeled_q_values),
            ("unlabeled-activations", &self.unlabeled_activations),
            ("unlabeled-image", &self.unlabeled_images),
        ]
    }

    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        for (name, ds) in self.datasets() {
            let path = dir.join(format!("{name}.apds"));
            write_atomic(&path, &ds.to_bytes()?)?;
            written.push(path);
        }
        Ok(written)
    }

    pub fn load(dir: &Path, agent_id: &str, variant: Variant) -> Result<Self> {
        let read = |name: &str| -> Result<LabeledDataset> {
            LabeledDataset::from_bytes(&std::fs::read(dir.join(format!("{name}.apds")))?)
        };
        Ok(Self {
            agent_id: agent_id.to_string(),
            variant,
            labeled_activations: read("labeled-activations")?,
            labeled_images: read("labeled-image")?,
            labeled_q_values: read("labeled-q_values")?,
            unlabeled_activations: read("unlabeled-activations")?,
            unlabeled_images: read("unlabeled-image")?,
        })
    }

    fn labeled(&self, input: InputSource) -> Result<&LabeledDataset> {
        match input {
            InputSource::Activations => Ok(&self.labeled_activations),
            InputSource::Image => Ok(&self.labeled_images),
            InputSource::QValues => Ok(&self.labeled_q_values),
            InputSource::AutoencoderCode => Err(Error::Contract(
                "autoencoder codes are not stored per agent".into(),
            )),
        }
    }
}

pub fn unlabeled_seed(master: u64, agent_id: &str) -> u64 {
    derive_seed(master, &format!("collect/unlabeled/{agent_id}"))
}

pub fn labeled_seed(master: u64, agent_id: &str) -> u64 {
    derive_seed(master, &format!("collect/labeled/{agent_id}"))
}

/// Collect the unlabeled and labeled pools of one agent. The pools come from
/// separate rollouts, so no state instance is shared.
pub fn collect_agent_data(
    agent: &TrainedAgent,
    world: &GridWorld,
    grid: &GridSettings,
    collection: &CollectionSettings,
    master: u64,
) -> Result<AgentData> {
    let variant = variant_of(world);
    let net = &agent.network;
    let tag = |input| SourceTag { input, variant };
    let labeled = collect_states(
        net,
        world,
        grid.labeled_size,
        collection,
        labeled_seed(master, &agent.id),
    )?;
    let unlabeled = collect_states(
        net,
        world,
        grid.unlabeled_size,
        collection,
        unlabeled_seed(master, &agent.id),
    )?;
    let image_rows = &unlabeled[..grid.image_fit_rows.min(unlabeled.len())];
    let unlabeled_set = |input, states: &[_]| -> Result<LabeledDataset> {
        LabeledDataset::new(
            tag(input),
            features(net, world, states, input)?,
            super::collect::labels_of(states),
        )
    };
    Ok(AgentData {
        agent_id: agent.id.clone(),
        variant,
        labeled_activations: labeled_dataset(
            tag(InputSource::Activations),
            features(net, world, &labeled, InputSource::Activations)?,
            &labeled,
        )?,
        labeled_images: labeled_dataset(
            tag(InputSource::Image),
            features(net, world, &labeled, InputSource::Image)?,
            &labeled,
        )?,
        labeled_q_values: labeled_dataset(
            tag(InputSource::QValues),
            features(net, world, &labeled, InputSource::QValues)?,
            &labeled,
        )?,
        unlabeled_activations: unlabeled_set(InputSource::Activations, &unlabeled)?,
        unlabeled_images: unlabeled_set(InputSource::Image, image_rows)?,
    })
}

/// Rendered images of an agent's full unlabeled pool; the autoencoder corpus.
pub fn autoencoder_corpus(
    agent: &TrainedAgent,
    world: &GridWorld,
    grid: &GridSettings,
    collection: &CollectionSettings,
    master: u64,
) -> Result<Tensor<f32>> {
    let states = collect_states(
        &agent.network,
        world,
        grid.unlabeled_size,
        collection,
        unlabeled_seed(master, &agent.id),
    )?;
    features(&agent.network, world, &states, InputSource::Image)
}

/// Everything [`run_grid`] consumes.
#[derive(Debug, Clone)]
pub struct GridInputs {
    /// Top agents of both variants, best first within a variant.
    pub agents: Vec<AgentData>,
    /// Autoencoder inits with their ids.
    pub autoencoders: Vec<(String, Autoencoder)>,
    /// Labeled images whose codes feed the autoencoder cell.
    pub autoencoder_images: LabeledDataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberResult {
    /// Agent id, or autoencoder init id for the autoencoder row.
    pub source_id: String,
    pub best_index: usize,
    pub hyperparams: MethodHyperparams,
    pub run_aucs: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub spec: MethodSpec,
    pub auc_mean: Option<f64>,
    pub auc_std: Option<f64>,
    pub n_runs: usize,
    pub members: Vec<MemberResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMetadata {
    pub master_seed: u64,
    pub agent_ids: BTreeMap<Variant, Vec<String>>,
    pub autoencoder_ids: Vec<String>,
    pub labeled_size: usize,
    pub unlabeled_size: usize,
    pub shuffled_labels: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsGrid {
    pub cells: Vec<CellResult>,
    pub metadata: GridMetadata,
}

/// Search trials of one (cell, member) pair.
#[derive(Debug, Clone)]
pub struct TrialLog {
    pub name: String,
    pub trials: Vec<TrialResult>,
}

struct Job<'a> {
    row: GridRow,
    methods: Vec<Method>,
    agent: Option<&'a AgentData>,
    autoencoder: Option<&'a (String, Autoencoder)>,
}

impl Job<'_> {
    fn source_id(&self) -> &str {
        match (self.agent, self.autoencoder) {
            (Some(a), _) => &a.agent_id,
            (_, Some((id, _))) => id,
            _ => unreachable!("a job has an agent or an autoencoder"),
        }
    }
}

type JobOutput = Vec<(MethodSpec, Result<(MemberResult, Vec<TrialResult>)>)>;

fn reduction_inputs(row: GridRow, agent: &AgentData) -> Result<Tensor<f32>> {
    let x = match row.input {
        InputSource::Activations => agent.unlabeled_activations.features(),
        InputSource::Image => agent.unlabeled_images.features(),
        other => {
            return Err(Error::Contract(format!(
                "no unlabeled pool for {}",
                other.as_str()
            )))
        }
    };
    Tensor::new(vec![x.batch(), x.sample_len()], x.data().to_vec())
}

/// Fit every reduction the search space can ask for on the unlabeled pool and
/// map the labeled pool through it. PCA is fitted once at the largest k.
fn prepare_reductions(
    data: &mut CellData,
    fit: &Tensor<f32>,
    ks: &[usize],
    nmf_iterations: usize,
    seed: u64,
) -> Result<()> {
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let max_k = *ks
        .last()
        .ok_or_else(|| Error::Config("no reduction sizes".into()))?;
    let pca = fit_pca(fit, max_k)?;
    for &k in &ks {
        let models = [
            (ReductionKind::Pca, ReductionModel::Pca(pca.truncated(k)?)),
            (
                ReductionKind::Nmf,
                ReductionModel::Nmf(
                    fit_nmf_shifted(
                        fit,
                        k,
                        nmf_iterations,
                        derive_seed(seed, &format!("nmf/{k}")),
                    )?
                    .model,
                ),
            ),
        ];
        for (kind, model) in models {
            let reduced = model.apply(data.labeled.features())?;
            let tag = data.labeled.tag();
            let ds = data.labeled.with_features(tag, reduced)?;
            data.reductions
                .insert(ReductionChoice { kind, k }, (model, ds));
        }
    }
    Ok(())
}

fn cell_data(
    job: &Job,
    inputs: &GridInputs,
    grid: &GridSettings,
    search: &SearchSettings,
    seed: u64,
) -> Result<CellData> {
    let labeled = match (job.agent, job.autoencoder) {
        (Some(agent), _) => agent.labeled(job.row.input)?.clone(),
        (_, Some((_, ae))) => {
            let codes = ae.encode(inputs.autoencoder_images.features())?;
            let tag = SourceTag {
                input: InputSource::AutoencoderCode,
                variant: job.row.variant,
            };
            inputs.autoencoder_images.with_features(tag, codes)?
        }
        _ => unreachable!("a job has an agent or an autoencoder"),
    };
    let mut data = CellData::new(labeled);
    if let Some(agent) = job.agent {
        if job.methods.iter().any(|m| m.reduces()) {
            let fit = reduction_inputs(job.row, agent)?;
            prepare_reductions(
                &mut data,
                &fit,
                &search.space.reduction_k,
                grid.nmf_iterations,
                derive_seed(seed, "reductions"),
            )?;
        }
        if job.methods.contains(&Method::ClusterMajority) {
            data.unlabeled = Some(agent.unlabeled_activations.features().clone());
        }
    }
    Ok(data)
}

fn run_job(
    job: &Job,
    inputs: &GridInputs,
    grid: &GridSettings,
    search: &SearchSettings,
    master: u64,
    shuffle: bool,
) -> JobOutput {
    let id = job.source_id().to_string();
    let base = derive_seed(
        master,
        &format!(
            "grid/{}/{}/{id}",
            job.row.input.as_str(),
            job.row.variant.as_str()
        ),
    );
    let specs: Vec<MethodSpec> = job
        .methods
        .iter()
        .map(|&m| MethodSpec::new(job.row.input, job.row.variant, m))
        .collect();
    let data = cell_data(job, inputs, grid, search, base).and_then(|d| {
        if shuffle {
            d.label_shuffled(derive_seed(base, "null"))
        } else {
            Ok(d)
        }
    });
    let data = match data {
        Ok(d) => d,
        Err(e) => {
            let msg = e.to_string();
            return specs
                .into_iter()
                .map(|s| {
                    (
                        s,
                        Err(Error::Stage {
                            stage: format!("data for {id}"),
                            message: msg.clone(),
                        }),
                    )
                })
                .collect();
        }
    };
    specs
        .into_iter()
        .map(|spec| {
            let seed = derive_seed(base, spec.method.as_str());
            let out = random_search(&spec, &data, search, derive_seed(seed, "search")).and_then(
                |outcome| {
                    let fin = final_evaluation(
                        &spec,
                        &data,
                        &outcome.best,
                        search,
                        derive_seed(seed, "final"),
                    )?;
                    let member = MemberResult {
                        source_id: id.clone(),
                        best_index: outcome.best_index,
                        hyperparams: outcome.best,
                        run_aucs: fin.run_aucs,
                        mean: fin.mean,
                        std: fin.std,
                    };
                    Ok((member, outcome.trials))
                },
            );
            (spec, out)
        })
        .collect()
}

fn aggregate(spec: MethodSpec, members: Vec<MemberResult>, errors: Vec<String>) -> CellResult {
    if !errors.is_empty() || members.is_empty() {
        let error = if errors.is_empty() {
            "no members".to_string()
        } else {
            errors.join("; ")
        };
        return CellResult {
            spec,
            auc_mean: None,
            auc_std: None,
            n_runs: 0,
            members,
            error: Some(error),
        };
    }
    if spec.input == InputSource::AutoencoderCode {
        // the best init is reported
        let best = members
            .iter()
            .enumerate()
            .fold(0, |b, (i, m)| if m.mean > members[b].mean { i } else { b });
        let m = &members[best];
        return CellResult {
            spec,
            auc_mean: Some(m.mean),
            auc_std: Some(m.std),
            n_runs: m.run_aucs.len(),
            members,
            error: None,
        };
    }
    let runs: Vec<f64> = members
        .iter()
        .flat_map(|m| m.run_aucs.iter().copied())
        .collect();
    let (mean, std) = mean_std(&runs);
    CellResult {
        spec,
        auc_mean: Some(mean),
        auc_std: Some(std),
        n_runs: runs.len(),
        members,
        error: None,
    }
}

/// Search and final-evaluate every non-N/A cell. Activation, image and
/// Q-value cells pool the final runs of the top agents; the autoencoder cell
/// reports its best init. Failed cells are recorded and the run continues.
pub fn run_grid(
    inputs: &GridInputs,
    grid: &GridSettings,
    search: &SearchSettings,
    master: u64,
    shuffle_labels: bool,
    workers: usize,
) -> Result<(ResultsGrid, Vec<TrialLog>)> {
    run_cells(
        inputs,
        grid,
        search,
        master,
        shuffle_labels,
        workers,
        &default_grid(grid.include_clustering),
    )
}

/// [`run_grid`] restricted to `specs`. Seeds depend only on the cell and
/// member, so a cell gets the same numbers here as in the full grid.
pub fn run_cells(
    inputs: &GridInputs,
    grid: &GridSettings,
    search: &SearchSettings,
    master: u64,
    shuffle_labels: bool,
    workers: usize,
    specs: &[MethodSpec],
) -> Result<(ResultsGrid, Vec<TrialLog>)> {
    grid.validate(search)?;
    search.validate()?;
    let specs = specs.to_vec();
    let mut agent_ids: BTreeMap<Variant, Vec<String>> = BTreeMap::new();
    for a in &inputs.agents {
        agent_ids
            .entry(a.variant)
            .or_default()
            .push(a.agent_id.clone());
    }
    let mut jobs = Vec::new();
    for row in GridRow::ALL {
        let methods: Vec<Method> = specs
            .iter()
            .filter(|s| s.input == row.input && s.variant == row.variant)
            .map(|s| s.method)
            .collect();
        if methods.is_empty() {
            continue;
        }
        if row.input == InputSource::AutoencoderCode {
            for ae in &inputs.autoencoders {
                jobs.push(Job {
                    row,
                    methods: methods.clone(),
                    agent: None,
                    autoencoder: Some(ae),
                });
            }
        } else {
            let agents = inputs
                .agents
                .iter()
                .filter(|a| a.variant == row.variant)
                .take(grid.agents_per_cell);
            for agent in agents {
                jobs.push(Job {
                    row,
                    methods: methods.clone(),
                    agent: Some(agent),
                    autoencoder: None,
                });
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Stage {
            stage: "grid".into(),
            message: format!("cannot start worker pool: {e}"),
        })?;
    let outputs: Vec<(String, JobOutput)> = pool.install(|| {
        jobs.par_iter()
            .map(|j| {
                (
                    j.source_id().to_string(),
                    run_job(j, inputs, grid, search, master, shuffle_labels),
                )
            })
            .collect()
    });

    let mut members: BTreeMap<MethodSpec, (Vec<MemberResult>, Vec<String>)> = BTreeMap::new();
    let mut logs = Vec::new();
    for (source, output) in outputs {
        for (spec, result) in output {
            let entry = members.entry(spec).or_default();
            match result {
                Ok((member, trials)) => {
                    logs.push(TrialLog {
                        name: format!("{}-{source}", spec.key()),
                        trials,
                    });
                    entry.0.push(member);
                }
                Err(e) => entry.1.push(format!("{source}: {e}")),
            }
        }
    }
    let cells = specs
        .into_iter()
        .map(|spec| {
            let (m, e) = members.remove(&spec).unwrap_or_default();
            aggregate(spec, m, e)
        })
        .collect();
    let metadata = GridMetadata {
        master_seed: master,
        agent_ids,
        autoencoder_ids: inputs
            .autoencoders
            .iter()
            .map(|(id, _)| id.clone())
            .collect(),
        labeled_size: grid.labeled_size,
        unlabeled_size: grid.unlabeled_size,
        shuffled_labels: shuffle_labels,
    };
    Ok((ResultsGrid { cells, metadata }, logs))
}

impl ResultsGrid {
    pub fn cell(
        &self,
        input: InputSource,
        variant: Variant,
        method: Method,
    ) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.spec.input == input && c.spec.variant == variant && c.spec.method == method)
    }

    /// Mean AUC of a cell that ran successfully.
    pub fn mean(&self, input: InputSource, variant: Variant, method: Method) -> Option<f64> {
        self.cell(input, variant, method).and_then(|c| c.auc_mean)
    }

    pub fn failed_cells(&self) -> Vec<&CellResult> {
        self.cells.iter().filter(|c| c.error.is_some()).collect()
    }

    /// `method,input,variant,auc_mean,auc_std,n_runs`; failed cells leave the
    /// numbers empty with `n_runs = 0`.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "method", "input", "variant", "auc_mean", "auc_std", "n_runs",
        ])?;
        let num = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for c in &self.cells {
            let method = match c.spec.reduction {
                Some(r) => format!("{}_{}", c.spec.method.as_str(), r.as_str()),
                None => c.spec.method.as_str().to_string(),
            };
            w.write_record([
                method,
                c.spec.input.as_str().to_string(),
                c.spec.variant.as_str().to_string(),
                num(c.auc_mean),
                num(c.auc_std),
                c.n_runs.to_string(),
            ])?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    /// Aligned text table with the results-table layout: mean to 2 decimals,
    /// standard deviation in parentheses, N/A where a cell is not evaluated.
    pub fn render_table(&self) -> String {
        let mut columns = Method::COLUMNS.to_vec();
        if self
            .cells
            .iter()
            .any(|c| c.spec.method == Method::ClusterMajority)
        {
            columns.push(Method::ClusterMajority);
        }
        let mut rows = vec![std::iter::once("Input".to_string())
            .chain(columns.iter().map(|m| m.title().to_string()))
            .collect::<Vec<_>>()];
        for row in GridRow::ALL {
            let mut line = vec![row.title()];
            for &m in &columns {
                let text = match self.cell(row.input, row.variant, m) {
                    None => "N/A".to_string(),
                    Some(c) => match (c.auc_mean, c.auc_std) {
                        (Some(mean), Some(std)) => format!("{mean:.2} ({std:.2})"),
                        _ => "failed".to_string(),
                    },
                };
                line.push(text);
            }
            rows.push(line);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|j| rows.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in &rows {
            let cells: Vec<String> = r
                .iter()
                .zip(&widths)
                .map(|(t, &w)| format!("{t:<w$}"))
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }
}

/// Write `results.csv`, `table.txt`, `grid.json` and one JSONL trial log per
/// (cell, member) under `dir`. Returns the written paths.
pub fn write_grid(dir: &Path, grid: &ResultsGrid, logs: &[TrialLog]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut put = |path: PathBuf, bytes: &[u8]| -> Result<()> {
        write_atomic(&path, bytes)?;
        written.push(path);
        Ok(())
    };
    put(dir.join("results.csv"), &grid.to_csv()?)?;
    put(dir.join("table.txt"), grid.render_table().as_bytes())?;
    put(dir.join("grid.json"), &serde_json::to_vec_pretty(grid)?)?;
    for log in logs {
        let mut body = Vec::new();
        for t in &log.trials {
            serde_json::to_writer(&mut body, t)?;
            body.push(b'\n');
        }
        put(dir.join("logs").join(format!("{}.jsonl", log.name)), &body)?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn synthetic(
        variant: Variant,
        input: InputSource,
        shape: &[usize],
        n: usize,
        signal: f32,
        seed: u64,
    ) -> LabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d: usize = shape.iter().product();
        let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let mut x = Vec::with_capacity(n * d);
        for &l in &labels {
            for j in 0..d {
                let base: f32 = rng.gen_range(0.0..1.0);
                x.push(if j == 0 {
                    base * (1.0 - signal) + signal * l as f32
                } else {
                    base
                });
            }
        }
        let mut full = vec![n];
        full.extend_from_slice(shape);
        LabeledDataset::new(
            SourceTag { input, variant },
            Tensor::new(full, x).unwrap(),
            labels,
        )
        .unwrap()
    }

    fn agent(variant: Variant, i: u64) -> AgentData {
        let s = 100 * i + variant as u64;
        AgentData {
            agent_id: format!("{}-{i}", variant.as_str()),
            variant,
            labeled_activations: synthetic(variant, InputSource::Activations, &[8], 700, 0.8, s),
            labeled_images: synthetic(variant, InputSource::Image, &[3, 8, 8], 700, 0.3, s + 1),
            labeled_q_values: synthetic(variant, InputSource::QValues, &[3], 700, 0.5, s + 2),
            unlabeled_activations: synthetic(
                variant,
                InputSource::Activations,
                &[8],
                300,
                0.8,
                s + 3,
            ),
            unlabeled_images: synthetic(variant, InputSource::Image, &[3, 8, 8], 300, 0.3, s + 4),
        }
    }

    fn tiny() -> (GridSettings, SearchSettings) {
        let grid = GridSettings {
            unlabeled_size: 300,
            labeled_size: 700,
            image_fit_rows: 300,
            nmf_iterations: 20,
            agents_per_cell: 2,
            autoencoder_inits: 1,
            include_clustering: true,
        };
        let mut search = SearchSettings {
            n_configs: 2,
            splits: 2,
            final_runs: 3,
            ..Default::default()
        };
        search.space.max_epochs = 5;
        search.space.reduction_k = vec![2, 4];
        search.space.clusters = vec![2];
        (grid, search)
    }

    fn inputs() -> GridInputs {
        let images = synthetic(
            Variant::Penalized,
            InputSource::Image,
            &[3, 8, 8],
            700,
            0.3,
            99,
        );
        let ae_hp = crate::probe::AutoencoderHyperparams {
            bottleneck: 4,
            decoder_hidden: 8,
            conv_channels: [2, 2],
            ..Default::default()
        };
        let spec = ae_hp.network_spec([3, 8, 8]).unwrap();
        let net = crate::nn::Network::init(spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        GridInputs {
            agents: vec![
                agent(Variant::Penalized, 0),
                agent(Variant::Penalized, 1),
                agent(Variant::NoPenalty, 0),
                agent(Variant::NoPenalty, 1),
            ],
            autoencoders: vec![(
                "ae-0".into(),
                Autoencoder {
                    network: net,
                    code_layer: crate::probe::autoencoder::CODE_LAYER,
                },
            )],
            autoencoder_images: images,
        }
    }

    #[test]
    fn grid_fills_every_cell_and_pools_runs() {
        let (g, s) = tiny();
        let (grid, logs) = run_grid(&inputs(), &g, &s, 7, false, 1).unwrap();
        assert_eq!(grid.cells.len(), default_grid(true).len());
        assert!(grid.failed_cells().is_empty(), "{:?}", grid.failed_cells());
        for c in &grid.cells {
            let expect = if c.spec.input == InputSource::AutoencoderCode {
                3
            } else {
                6
            };
            assert_eq!(c.n_runs, expect, "{}", c.spec.key());
        }
        assert_eq!(
            logs.len(),
            grid.cells.iter().map(|c| c.members.len()).sum::<usize>()
        );
        let strong = grid
            .mean(InputSource::Activations, Variant::Penalized, Method::Single)
            .unwrap();
        assert!(strong > 0.9, "{strong}");
    }

    #[test]
    fn grid_is_deterministic_and_renders() {
        let (g, s) = tiny();
        let (a, _) = run_grid(&inputs(), &g, &s, 3, false, 1).unwrap();
        let (b, _) = run_grid(&inputs(), &g, &s, 3, false, 1).unwrap();
        assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
        let table = a.render_table();
        assert_eq!(table.lines().count(), 7);
        assert!(table.lines().nth(2).unwrap().contains("N/A"));
        let csv = String::from_utf8(a.to_csv().unwrap()).unwrap();
        assert!(csv.starts_with("method,input,variant,auc_mean,auc_std,n_runs\n"));
    }

    #[test]
    fn shuffled_labels_remove_the_signal() {
        let (g, s) = tiny();
        let (grid, _) = run_grid(&inputs(), &g, &s, 5, true, 1).unwrap();
        let m = grid
            .mean(InputSource::Activations, Variant::Penalized, Method::Single)
            .unwrap();
        assert!((0.3..0.7).contains(&m), "{m}");
    }

    #[test]
    fn failed_cells_are_recorded() {
        let (g, s) = tiny();
        let mut inp = inputs();
        let bad = inp.agents[0]
            .labeled_q_values
            .subset(&(0..10).collect::<Vec<_>>())
            .unwrap();
        inp.agents[0].labeled_q_values = bad;
        let (grid, _) = run_grid(&inp, &g, &s, 5, false, 1).unwrap();
        let c = grid
            .cell(InputSource::QValues, Variant::Penalized, Method::Nn)
            .unwrap();
        assert!(c.error.is_some() && c.auc_mean.is_none());
        let csv = String::from_utf8(grid.to_csv().unwrap()).unwrap();
        assert!(csv.contains("nn,q_values,penalized,,,0"));
        assert!(grid.render_table().contains("failed"));
    }
}

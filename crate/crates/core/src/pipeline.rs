//! Resumable end-to-end runs inside one run directory.
//!
//! Every stage has a fingerprint over the configuration sections it reads,
//! the master seed and the fingerprints of the stages it depends on. A stage
//! is skipped when the manifest holds the same fingerprint and every output it
//! listed is present with the recorded hash. The manifest is rewritten after
//! each stage, so it is always the last file written.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::Config;
use crate::dqn::sweep::{load_agent, read_ranking, save_sweep};
use crate::dqn::{competence, sweep_and_rank, CompetenceReport, TrainedAgent};
use crate::env::GridWorld;
use crate::error::{Error, Result};
use crate::fsutil::{hash_file, sha256_hex, write_atomic};
use crate::harness::grid::{autoencoder_corpus, collect_agent_data};
use crate::harness::{
    bootstrap_loop, run_cells, run_grid, write_grid, AgentData, BootstrapReport, GridInputs,
    Method, MethodSpec, PreferenceSource, ResultsGrid,
};
use crate::nn::checkpoint::{network_container, network_from_container, Container};
use crate::probe::autoencoder::readback_states;
use crate::probe::{
    apple_count_readback, train_autoencoder, Autoencoder, InputSource, ReconstructionReport,
    Variant,
};
use crate::seed::derive_seed;

pub const MANIFEST: &str = "manifest.json";
pub const AUTOENCODER_KIND: &str = "autoencoder";
pub const SPLITTING_RULE: &str =
    "derive_seed(master, label) = splitmix64(master ^ fnv1a64(label)); labels name the job";
/// Env seeds whose rollouts supply the apple-count readback states.
pub const READBACK_SEEDS: u64 = 20;

/// Optional stages of `run-all` beyond sweep, collect, autoencoder, grid and report.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSettings {
    /// Rerun the grid with every labeled pool label-shuffled.
    pub null_grid: bool,
    /// Bootstrap with the extracted probe as the preference signal.
    pub bootstrap_probe: bool,
    /// Bootstrap with the ground-truth label as the preference signal.
    pub bootstrap_oracle: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    SweepPenalized,
    SweepNoPenalty,
    Collect,
    Autoencoder,
    Grid,
    NullGrid,
    BootstrapProbe,
    BootstrapOracle,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::SweepPenalized => "sweep-penalized",
            Stage::SweepNoPenalty => "sweep-no-penalty",
            Stage::Collect => "collect",
            Stage::Autoencoder => "autoencoder",
            Stage::Grid => "grid",
            Stage::NullGrid => "null-grid",
            Stage::BootstrapProbe => "bootstrap-probe",
            Stage::BootstrapOracle => "bootstrap-oracle",
            Stage::Report => "report",
        }
    }

    fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::SweepPenalized | Stage::SweepNoPenalty => &[],
            Stage::Collect => &[Stage::SweepPenalized, Stage::SweepNoPenalty],
            Stage::Autoencoder => &[Stage::SweepPenalized],
            Stage::Grid | Stage::NullGrid => &[Stage::Collect, Stage::Autoencoder],
            Stage::BootstrapProbe => &[Stage::SweepPenalized, Stage::Grid],
            Stage::BootstrapOracle => &[Stage::SweepPenalized],
            Stage::Report => &[Stage::Grid],
        }
    }

    fn sections(self, c: &Config) -> Value {
        match self {
            Stage::SweepPenalized | Stage::SweepNoPenalty => json!([c.env, c.dqn, c.sweep, c.eval]),
            Stage::Collect => json!([c.collection, c.grid]),
            Stage::Autoencoder => json!([c.collection, c.grid, c.autoencoder]),
            Stage::Grid | Stage::NullGrid => json!([c.grid, c.search]),
            Stage::BootstrapProbe | Stage::BootstrapOracle => {
                json!([c.bootstrap, c.collection, c.eval])
            }
            Stage::Report => json!([]),
        }
    }

    /// Stages `run-all` executes for `config`, in order.
    pub fn plan(config: &Config) -> Vec<Stage> {
        let mut stages = vec![
            Stage::SweepPenalized,
            Stage::SweepNoPenalty,
            Stage::Collect,
            Stage::Autoencoder,
            Stage::Grid,
        ];
        if config.pipeline.null_grid {
            stages.push(Stage::NullGrid);
        }
        if config.pipeline.bootstrap_probe {
            stages.push(Stage::BootstrapProbe);
        }
        if config.pipeline.bootstrap_oracle {
            stages.push(Stage::BootstrapOracle);
        }
        stages.push(Stage::Report);
        stages
    }

    /// `stage` together with everything it depends on, in run order.
    pub fn with_upstream(stage: Stage) -> Vec<Stage> {
        let mut out = Vec::new();
        fn visit(s: Stage, out: &mut Vec<Stage>) {
            for &u in s.upstream() {
                visit(u, out);
            }
            if !out.contains(&s) {
                out.push(s);
            }
        }
        visit(stage, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub fingerprint: String,
    /// Run-dir relative paths, each also listed under `artifacts`.
    pub outputs: Vec<String>,
    pub completed_unix: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub master_seed: u64,
    pub splitting_rule: String,
    pub config: Config,
    pub stages: BTreeMap<String, StageRecord>,
    /// sha256 of every file written under the run directory except this manifest.
    pub artifacts: BTreeMap<String, String>,
    pub failure: Option<StageFailure>,
}

impl RunManifest {
    pub fn load(run_dir: &Path) -> Result<Option<Self>> {
        let path = run_dir.join(MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_slice(&std::fs::read(path)?)?))
    }

    /// Recompute every artifact hash; returns the paths whose content differs.
    pub fn verify(&self, run_dir: &Path) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for (rel, hash) in &self.artifacts {
            let path = run_dir.join(rel);
            if !path.exists() || &hash_file(&path)? != hash {
                bad.push(rel.clone());
            }
        }
        Ok(bad)
    }
}

/// Progress notifications from [`Run::run_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StageEvent {
    Started,
    Skipped,
    Finished { seconds: f64 },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineOutcome {
    pub ran: Vec<Stage>,
    pub skipped: Vec<Stage>,
}

/// A run directory plus its manifest.
pub struct Run {
    dir: PathBuf,
    config: Config,
    master: u64,
    workers: usize,
    manifest: RunManifest,
}

fn rel(dir: &Path, path: &Path) -> String {
    path.strip_prefix(dir)
        .unwrap_or(path)
        .components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}

fn variant_dir(variant: Variant) -> &'static str {
    match variant {
        Variant::Penalized => "penalized",
        Variant::NoPenalty => "no-penalty",
    }
}

impl Run {
    pub fn open(dir: &Path, config: Config, master: u64, workers: usize) -> Result<Self> {
        config.validate()?;
        std::fs::create_dir_all(dir)?;
        let previous = RunManifest::load(dir)?;
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed: master,
            splitting_rule: SPLITTING_RULE.to_string(),
            config: config.clone(),
            stages: previous
                .as_ref()
                .map(|m| m.stages.clone())
                .unwrap_or_default(),
            artifacts: previous.map(|m| m.artifacts).unwrap_or_default(),
            failure: None,
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            config,
            master,
            workers,
            manifest,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    fn fingerprint(&self, stage: Stage) -> Result<String> {
        let mut upstream = BTreeMap::new();
        for &u in stage.upstream() {
            let rec = self
                .manifest
                .stages
                .get(u.name())
                .ok_or_else(|| Error::Stage {
                    stage: stage.name().into(),
                    message: format!("stage `{}` has not completed", u.name()),
                })?;
            upstream.insert(u.name(), rec.fingerprint.clone());
        }
        let doc = json!({
            "stage": stage.name(),
            "version": env!("CARGO_PKG_VERSION"),
            "seed": self.master,
            "sections": stage.sections(&self.config),
            "upstream": upstream,
        });
        Ok(sha256_hex(&serde_json::to_vec(&doc)?))
    }

    fn is_current(&self, stage: Stage, fingerprint: &str) -> Result<bool> {
        let Some(rec) = self.manifest.stages.get(stage.name()) else {
            return Ok(false);
        };
        if rec.fingerprint != fingerprint {
            return Ok(false);
        }
        for out in &rec.outputs {
            let path = self.dir.join(out);
            match self.manifest.artifacts.get(out) {
                Some(h) if path.exists() && &hash_file(&path)? == h => {}
                _ => return Ok(false),
            }
        }
        Ok(true)
    }

    fn write_manifest(&self) -> Result<()> {
        write_atomic(
            &self.dir.join(MANIFEST),
            &serde_json::to_vec_pretty(&self.manifest)?,
        )
    }

    /// Run `stage` unless it is current. Failures are recorded in the manifest
    /// and partial outputs are left in place.
    pub fn run_stage(&mut self, stage: Stage) -> Result<bool> {
        let fingerprint = self.fingerprint(stage)?;
        if self.is_current(stage, &fingerprint)? {
            return Ok(false);
        }
        self.manifest.stages.remove(stage.name());
        match self.execute(stage) {
            Ok(paths) => {
                let mut outputs = Vec::with_capacity(paths.len());
                for p in paths {
                    let r = rel(&self.dir, &p);
                    self.manifest.artifacts.insert(r.clone(), hash_file(&p)?);
                    outputs.push(r);
                }
                outputs.sort();
                outputs.dedup();
                let completed_unix = SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0);
                self.manifest.stages.insert(
                    stage.name().to_string(),
                    StageRecord {
                        fingerprint,
                        outputs,
                        completed_unix,
                    },
                );
                self.manifest.failure = None;
                self.write_manifest()?;
                Ok(true)
            }
            Err(e) => {
                let message = e.to_string();
                self.manifest.failure = Some(StageFailure {
                    stage: stage.name().to_string(),
                    message: message.clone(),
                });
                self.write_manifest()?;
                Err(match e {
                    Error::Config(_) | Error::Parse { .. } => e,
                    _ => Error::Stage {
                        stage: stage.name().to_string(),
                        message,
                    },
                })
            }
        }
    }

    /// Run `stages` in order, skipping current ones.
    pub fn run(&mut self, stages: &[Stage]) -> Result<PipelineOutcome> {
        self.run_with(stages, |_, _| {})
    }

    /// [`Run::run`] with a progress callback.
    pub fn run_with<F: FnMut(Stage, StageEvent)>(
        &mut self,
        stages: &[Stage],
        mut progress: F,
    ) -> Result<PipelineOutcome> {
        let config_path = self.dir.join("config.toml");
        write_atomic(&config_path, self.config.to_toml()?.as_bytes())?;
        self.manifest
            .artifacts
            .insert("config.toml".into(), hash_file(&config_path)?);
        let mut outcome = PipelineOutcome::default();
        for &stage in stages {
            if self.is_current(stage, &self.fingerprint(stage)?)? {
                progress(stage, StageEvent::Skipped);
                outcome.skipped.push(stage);
                continue;
            }
            progress(stage, StageEvent::Started);
            // elapsed time is reported only, never recorded
            let started = std::time::Instant::now();
            self.run_stage(stage)?;
            progress(
                stage,
                StageEvent::Finished {
                    seconds: started.elapsed().as_secs_f64(),
                },
            );
            outcome.ran.push(stage);
        }
        self.write_manifest()?;
        Ok(outcome)
    }

    /// Hash files written outside a stage into the manifest.
    pub fn record_artifacts(&mut self, paths: &[PathBuf]) -> Result<()> {
        for p in paths {
            self.manifest
                .artifacts
                .insert(rel(&self.dir, p), hash_file(p)?);
        }
        self.write_manifest()
    }

    /// Search and final-evaluate the given cells on the collected data and
    /// write them under `searches/<name>/`. Numbers match the full grid.
    pub fn search_cells(
        &mut self,
        name: &str,
        specs: &[MethodSpec],
        shuffled: bool,
    ) -> Result<ResultsGrid> {
        let inputs = self.load_grid_inputs()?;
        let seed = if shuffled {
            derive_seed(self.master, "null-grid")
        } else {
            self.master
        };
        let (grid, logs) = run_cells(
            &inputs,
            &self.config.grid,
            &self.config.search,
            seed,
            shuffled,
            self.workers,
            specs,
        )?;
        let paths = write_grid(&self.dir.join("searches").join(name), &grid, &logs)?;
        self.record_artifacts(&paths)?;
        Ok(grid)
    }

    /// Greedy evaluation of a swept agent next to the scripted controls,
    /// written to `evaluations/<id>.json`. `None` picks the best agent.
    pub fn evaluate_agent(
        &mut self,
        variant: Variant,
        id: Option<&str>,
    ) -> Result<(String, CompetenceReport)> {
        let id = match id {
            Some(id) => id.to_string(),
            None => self
                .ranking(variant)?
                .into_iter()
                .next()
                .ok_or_else(|| Error::Sweep("sweep is empty".into()))?,
        };
        let agent = self.load_agent(variant, &id)?;
        let eval = &self.config.eval;
        let report = competence(
            &agent.network,
            &self.world(variant)?,
            eval.episodes,
            eval.seed,
        )?;
        let path = self.dir.join("evaluations").join(format!("{id}.json"));
        write_atomic(&path, &serde_json::to_vec_pretty(&report)?)?;
        self.record_artifacts(&[path])?;
        Ok((id, report))
    }

    fn execute(&self, stage: Stage) -> Result<Vec<PathBuf>> {
        match stage {
            Stage::SweepPenalized => self.sweep(Variant::Penalized),
            Stage::SweepNoPenalty => self.sweep(Variant::NoPenalty),
            Stage::Collect => self.collect(),
            Stage::Autoencoder => self.autoencoder(),
            Stage::Grid => self.grid(false),
            Stage::NullGrid => self.grid(true),
            Stage::BootstrapProbe => self.bootstrap(PreferenceSource::Probe),
            Stage::BootstrapOracle => self.bootstrap(PreferenceSource::Oracle),
            Stage::Report => self.report(),
        }
    }

    pub fn world(&self, variant: Variant) -> Result<GridWorld> {
        GridWorld::new(self.config.env_for(variant))
    }

    fn sweep_dir(&self, variant: Variant) -> PathBuf {
        self.dir.join("sweeps").join(variant_dir(variant))
    }

    /// Agent ids of a variant, best first.
    pub fn ranking(&self, variant: Variant) -> Result<Vec<String>> {
        read_ranking(&self.sweep_dir(variant))
    }

    pub fn load_agent(&self, variant: Variant, id: &str) -> Result<TrainedAgent> {
        load_agent(
            &self
                .sweep_dir(variant)
                .join("agents")
                .join(id)
                .join("checkpoint.bin"),
        )
    }

    fn top_agents(&self, variant: Variant) -> Result<Vec<String>> {
        let mut ids = self.ranking(variant)?;
        ids.truncate(self.config.grid.agents_per_cell);
        Ok(ids)
    }

    fn sweep(&self, variant: Variant) -> Result<Vec<PathBuf>> {
        let world = self.world(variant)?;
        let jobs = self
            .config
            .sweep
            .jobs(&self.config.dqn, variant_dir(variant), self.master)?;
        let ranked = sweep_and_rank(&world, &jobs, &self.config.eval, self.workers)?;
        let dir = self.sweep_dir(variant);
        save_sweep(&dir, &ranked)?;
        let mut out = vec![dir.join("ranking.csv")];
        for r in &ranked {
            let base = dir.join("agents").join(&r.agent.id);
            out.push(base.join("checkpoint.bin"));
            out.push(base.join("metrics.csv"));
        }
        Ok(out)
    }

    fn dataset_dir(&self, agent_id: &str) -> PathBuf {
        self.dir.join("datasets").join(agent_id)
    }

    fn collect(&self) -> Result<Vec<PathBuf>> {
        let mut jobs = Vec::new();
        for variant in Variant::ALL {
            for id in self.top_agents(variant)? {
                jobs.push((variant, id));
            }
        }
        let pool = worker_pool(self.workers)?;
        let written: Vec<Result<Vec<PathBuf>>> = pool.install(|| {
            jobs.par_iter()
                .map(|(variant, id)| {
                    let agent = self.load_agent(*variant, id)?;
                    let data = collect_agent_data(
                        &agent,
                        &self.world(*variant)?,
                        &self.config.grid,
                        &self.config.collection,
                        self.master,
                    )?;
                    data.save(&self.dataset_dir(id))
                })
                .collect()
        });
        let mut out = Vec::new();
        for w in written {
            out.extend(w?);
        }
        Ok(out)
    }

    fn autoencoder_dir(&self) -> PathBuf {
        self.dir.join("autoencoder")
    }

    fn autoencoder(&self) -> Result<Vec<PathBuf>> {
        let best = self
            .ranking(Variant::Penalized)?
            .into_iter()
            .next()
            .ok_or_else(|| Error::Sweep("penalized sweep is empty".into()))?;
        let agent = self.load_agent(Variant::Penalized, &best)?;
        let world = self.world(Variant::Penalized)?;
        let corpus = autoencoder_corpus(
            &agent,
            &world,
            &self.config.grid,
            &self.config.collection,
            self.master,
        )?;
        let states = readback_states(&world, &(0..READBACK_SEEDS).collect::<Vec<_>>())?;
        let pool = worker_pool(self.workers)?;
        let trained: Vec<Result<(Autoencoder, ReconstructionReport, f64)>> = pool.install(|| {
            (0..self.config.grid.autoencoder_inits)
                .into_par_iter()
                .map(|i| {
                    let (ae, report) = train_autoencoder(
                        &corpus,
                        &self.config.autoencoder,
                        derive_seed(self.master, &format!("autoencoder/init-{i}")),
                    )?;
                    let readback = apple_count_readback(&ae, &world, &states)?;
                    Ok((ae, report, readback))
                })
                .collect()
        });
        let dir = self.autoencoder_dir();
        let mut out = Vec::new();
        let mut summary = Vec::new();
        for (i, t) in trained.into_iter().enumerate() {
            let (ae, report, readback) = t?;
            let path = dir.join(format!("init-{i}.bin"));
            let header = json!({ "code_layer": ae.code_layer, "hyperparams": self.config.autoencoder, "report": report, "readback": readback, "corpus_agent": best });
            write_atomic(
                &path,
                &network_container(&ae.network, AUTOENCODER_KIND, header.clone()).to_bytes(),
            )?;
            out.push(path);
            summary
                .push(json!({ "id": format!("init-{i}"), "report": report, "readback": readback }));
        }
        let path = dir.join("summary.json");
        write_atomic(
            &path,
            &serde_json::to_vec_pretty(
                &json!({ "corpus_agent": best, "readback_states": states.len(), "inits": summary }),
            )?,
        )?;
        out.push(path);
        Ok(out)
    }

    /// Autoencoder inits with their ids, in init order.
    pub fn load_autoencoders(&self) -> Result<Vec<(String, Autoencoder)>> {
        (0..self.config.grid.autoencoder_inits)
            .map(|i| {
                let c = Container::from_bytes(&std::fs::read(
                    self.autoencoder_dir().join(format!("init-{i}.bin")),
                )?)?;
                if c.kind != AUTOENCODER_KIND {
                    return Err(Error::Format(format!(
                        "expected an autoencoder container, found `{}`",
                        c.kind
                    )));
                }
                let code_layer = c
                    .header
                    .get("code_layer")
                    .and_then(Value::as_u64)
                    .ok_or_else(|| Error::Format("autoencoder header lacks code_layer".into()))?;
                Ok((
                    format!("init-{i}"),
                    Autoencoder {
                        network: network_from_container(&c)?,
                        code_layer: code_layer as usize,
                    },
                ))
            })
            .collect()
    }

    pub fn load_grid_inputs(&self) -> Result<GridInputs> {
        let mut agents = Vec::new();
        for variant in Variant::ALL {
            for id in self.top_agents(variant)? {
                agents.push(AgentData::load(&self.dataset_dir(&id), &id, variant)?);
            }
        }
        let autoencoder_images = agents
            .iter()
            .find(|a| a.variant == Variant::Penalized)
            .map(|a| a.labeled_images.clone())
            .ok_or_else(|| Error::Collection("no penalized agent data".into()))?;
        Ok(GridInputs {
            agents,
            autoencoders: self.load_autoencoders()?,
            autoencoder_images,
        })
    }

    fn grid_dir(&self, shuffled: bool) -> PathBuf {
        self.dir.join(if shuffled { "null-grid" } else { "grid" })
    }

    pub fn load_grid(&self, shuffled: bool) -> Result<ResultsGrid> {
        Ok(serde_json::from_slice(&std::fs::read(
            self.grid_dir(shuffled).join("grid.json"),
        )?)?)
    }

    fn grid(&self, shuffled: bool) -> Result<Vec<PathBuf>> {
        let inputs = self.load_grid_inputs()?;
        let seed = if shuffled {
            derive_seed(self.master, "null-grid")
        } else {
            self.master
        };
        let (grid, logs) = run_grid(
            &inputs,
            &self.config.grid,
            &self.config.search,
            seed,
            shuffled,
            self.workers,
        )?;
        write_grid(&self.grid_dir(shuffled), &grid, &logs)
    }

    fn bootstrap_dir(&self, source: PreferenceSource) -> PathBuf {
        self.dir.join("bootstrap").join(match source {
            PreferenceSource::Probe => "probe",
            PreferenceSource::Oracle => "oracle",
        })
    }

    pub fn load_bootstrap(&self, source: PreferenceSource) -> Result<BootstrapReport> {
        Ok(serde_json::from_slice(&std::fs::read(
            self.bootstrap_dir(source).join("report.json"),
        )?)?)
    }

    fn bootstrap(&self, source: PreferenceSource) -> Result<Vec<PathBuf>> {
        let best = self
            .ranking(Variant::Penalized)?
            .into_iter()
            .next()
            .ok_or_else(|| Error::Sweep("penalized sweep is empty".into()))?;
        let initial = self.load_agent(Variant::Penalized, &best)?;
        let mut settings = self.config.bootstrap.clone();
        if source == PreferenceSource::Probe {
            // the best activation-network configuration found by the grid
            let grid = self.load_grid(false)?;
            let chosen = grid
                .cell(InputSource::Activations, Variant::Penalized, Method::Nn)
                .and_then(|c| {
                    c.members
                        .iter()
                        .find(|m| m.source_id == best)
                        .or(c.members.first())
                })
                .and_then(|m| m.hyperparams.nn.clone());
            if let Some(hp) = chosen {
                settings.probe = hp;
            }
        }
        let (agent, report) = bootstrap_loop(
            &self.world(Variant::Penalized)?,
            initial,
            source,
            &settings,
            &self.config.collection,
            &self.config.eval,
            derive_seed(self.master, &format!("bootstrap/{:?}", source)),
        )?;
        let dir = self.bootstrap_dir(source);
        let paths = [
            dir.join("report.csv"),
            dir.join("report.json"),
            dir.join("agent.bin"),
        ];
        write_atomic(&paths[0], &report.to_csv()?)?;
        write_atomic(&paths[1], &serde_json::to_vec_pretty(&report)?)?;
        write_atomic(
            &paths[2],
            &crate::dqn::sweep::agent_container(&agent).to_bytes(),
        )?;
        Ok(paths.to_vec())
    }

    fn report(&self) -> Result<Vec<PathBuf>> {
        let grid = self.load_grid(false)?;
        let mut out = Vec::new();
        let mut put = |path: PathBuf, bytes: &[u8]| -> Result<()> {
            write_atomic(&path, bytes)?;
            out.push(path);
            Ok(())
        };
        put(self.dir.join("results.csv"), &grid.to_csv()?)?;
        let table = grid.render_table();
        put(self.dir.join("table.txt"), table.as_bytes())?;
        let mut text = format!(
            "master seed {}\n\nAUC by input and method (mean, std over final runs)\n\n{table}",
            self.master
        );
        for variant in Variant::ALL {
            if let Ok(ids) = self.ranking(variant) {
                text.push_str(&format!(
                    "\n{} agents, best first: {}\n",
                    variant.as_str(),
                    ids.join(", ")
                ));
            }
        }
        if let Ok(bytes) = std::fs::read(self.autoencoder_dir().join("summary.json")) {
            let summary: Value = serde_json::from_slice(&bytes)?;
            text.push_str("\nautoencoder inits (holdout mse, apple-count readback)\n");
            for init in summary["inits"].as_array().into_iter().flatten() {
                text.push_str(&format!(
                    "  {}: {:.5}, {:.3}\n",
                    init["id"].as_str().unwrap_or("?"),
                    init["report"]["holdout_mse"].as_f64().unwrap_or(f64::NAN),
                    init["readback"].as_f64().unwrap_or(f64::NAN)
                ));
            }
        }
        if let Ok(null) = self.load_grid(true) {
            text.push_str(&format!(
                "\nlabel-shuffled control\n\n{}",
                null.render_table()
            ));
        }
        for source in [PreferenceSource::Probe, PreferenceSource::Oracle] {
            if let Ok(r) = self.load_bootstrap(source) {
                text.push_str(&format!(
                    "\nbootstrap ({:?}, lambda {})\n",
                    source, r.lambda
                ));
                for row in &r.rounds {
                    let auc = row
                        .probe_auc
                        .map(|a| format!("{a:.3}"))
                        .unwrap_or_else(|| "-".into());
                    text.push_str(&format!(
                        "  round {}: reward {:.2} +- {:.2}, probe auc {auc}, {}\n",
                        row.round, row.eval_mean, row.eval_std, row.reward
                    ));
                }
            }
        }
        put(self.dir.join("report.txt"), text.as_bytes())?;
        Ok(out)
    }
}

/// Run the `run-all` plan for `config` in `run_dir`.
pub fn run_pipeline(
    run_dir: &Path,
    master: u64,
    config: &Config,
    workers: usize,
) -> Result<PipelineOutcome> {
    let mut run = Run::open(run_dir, config.clone(), master, workers)?;
    run.run(&Stage::plan(config))
}

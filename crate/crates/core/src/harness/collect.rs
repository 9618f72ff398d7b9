use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dqn::agent::{observation_tensor, select_action};
use crate::dqn::trainer::render_batch;
use crate::env::{preference_label, EnvState, GridWorld};
use crate::error::{Error, Result};
use crate::nn::{Network, Tensor};
use crate::probe::{Autoencoder, InputSource, LabeledDataset, SourceTag, Variant};

const FORWARD_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectionSettings {
    /// Exploration of the collecting agent.
    pub epsilon: f64,
    /// Probability that a post-step state is kept.
    pub sample_prob: f64,
}

impl Default for CollectionSettings {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            sample_prob: 0.25,
        }
    }
}

impl CollectionSettings {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(
                "collection epsilon must lie in [0, 1]".into(),
            ));
        }
        if !(self.sample_prob > 0.0 && self.sample_prob <= 1.0) {
            return Err(Error::Config(
                "collection sample_prob must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

pub fn variant_of(world: &GridWorld) -> Variant {
    if world.config().penalize_take {
        Variant::Penalized
    } else {
        Variant::NoPenalty
    }
}

/// Run the agent epsilon-greedily and keep `n` uniformly subsampled post-step
/// states. Episodes restart until enough states are kept.
pub fn collect_states(
    network: &Network<f32>,
    world: &GridWorld,
    n: usize,
    settings: &CollectionSettings,
    seed: u64,
) -> Result<Vec<EnvState>> {
    settings.validate()?;
    if n == 0 {
        return Err(Error::Collection("requested zero samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(n);
    let (mut state, mut obs) = world.reset(rng.gen());
    while states.len() < n {
        let q = network.forward(&observation_tensor(&obs), None)?.0;
        let action = select_action(q.data(), settings.epsilon, &mut rng);
        let step = world.step(&state, action)?;
        if rng.gen_bool(settings.sample_prob) {
            states.push(step.next_state.clone());
        }
        if step.done {
            (state, obs) = world.reset(rng.gen());
        } else {
            state = step.next_state;
            obs = step.observation;
        }
    }
    Ok(states)
}

pub fn labels_of(states: &[EnvState]) -> Vec<u8> {
    states.iter().map(|s| preference_label(s).0).collect()
}

/// Features of `states` seen through `network`; autoencoder codes need
/// [`autoencoder_features`] instead.
pub fn features(
    network: &Network<f32>,
    world: &GridWorld,
    states: &[EnvState],
    source: InputSource,
) -> Result<Tensor<f32>> {
    let layer = network
        .spec()
        .last_hidden_layer()
        .ok_or_else(|| Error::Contract("agent network has no hidden layer".into()))?;
    let mut rows = Vec::new();
    let mut sample_shape = Vec::new();
    for chunk in states.chunks(FORWARD_BATCH) {
        let refs: Vec<&EnvState> = chunk.iter().collect();
        let images = render_batch(world, &refs);
        let block = match source {
            InputSource::Image => images,
            InputSource::Activations => network
                .forward(&images, Some(layer))?
                .1
                .expect("capture requested"),
            InputSource::QValues => network.forward(&images, None)?.0,
            InputSource::AutoencoderCode => {
                return Err(Error::Contract(
                    "autoencoder codes come from autoencoder_features".into(),
                ))
            }
        };
        sample_shape = block.shape()[1..].to_vec();
        rows.extend(block.into_data());
    }
    let mut shape = vec![states.len()];
    shape.extend(sample_shape);
    Tensor::new(shape, rows)
}

pub fn autoencoder_features(
    ae: &Autoencoder,
    world: &GridWorld,
    states: &[EnvState],
) -> Result<Tensor<f32>> {
    let mut rows = Vec::new();
    let mut width = 0;
    for chunk in states.chunks(FORWARD_BATCH) {
        let refs: Vec<&EnvState> = chunk.iter().collect();
        let code = ae.encode(&render_batch(world, &refs))?;
        width = code.sample_len();
        rows.extend(code.into_data());
    }
    Tensor::new(vec![states.len(), width], rows)
}

/// Label `states` by the simulator's preference label and pair them with features.
pub fn labeled_dataset(
    tag: SourceTag,
    features: Tensor<f32>,
    states: &[EnvState],
) -> Result<LabeledDataset> {
    let ds = LabeledDataset::new(tag, features, labels_of(states))?;
    if !ds.has_both_classes() {
        let (neg, pos) = ds.class_counts();
        return Err(Error::Collection(format!(
            "collected {} samples with {pos} positives and {neg} negatives; collect more steps or raise the collection epsilon",
            ds.len()
        )));
    }
    Ok(ds)
}

/// Collect `n` samples of `source` features from the agent, labeled by the
/// post-step state. The same seed gives a bit-identical dataset.
pub fn collect_dataset(
    network: &Network<f32>,
    world: &GridWorld,
    n: usize,
    source: InputSource,
    settings: &CollectionSettings,
    seed: u64,
) -> Result<LabeledDataset> {
    let states = collect_states(network, world, n, settings, seed)?;
    let x = features(network, world, &states, source)?;
    labeled_dataset(
        SourceTag {
            input: source,
            variant: variant_of(world),
        },
        x,
        &states,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dqn::DqnHyperparams;
    use crate::env::EnvConfig;

    fn agent(world: &GridWorld) -> Network<f32> {
        let spec = DqnHyperparams::default()
            .network_spec(world.config())
            .unwrap();
        Network::init(spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn sources_have_expected_widths() {
        let world = GridWorld::new(EnvConfig::default()).unwrap();
        let net = agent(&world);
        let s = CollectionSettings {
            epsilon: 1.0,
            sample_prob: 0.5,
        };
        let q = collect_dataset(&net, &world, 300, InputSource::QValues, &s, 3).unwrap();
        assert_eq!(q.sample_shape(), &[3]);
        let a = collect_dataset(&net, &world, 300, InputSource::Activations, &s, 3).unwrap();
        assert_eq!(a.sample_shape(), &[64]);
        assert_eq!(a.labels(), q.labels());
        let i = collect_dataset(&net, &world, 300, InputSource::Image, &s, 3).unwrap();
        assert_eq!(i.sample_shape(), &[3, 16, 28]);
    }

    #[test]
    fn collection_is_deterministic_per_seed() {
        let world = GridWorld::new(EnvConfig::default()).unwrap();
        let net = agent(&world);
        let s = CollectionSettings {
            epsilon: 1.0,
            ..Default::default()
        };
        let a = collect_dataset(&net, &world, 200, InputSource::Activations, &s, 9).unwrap();
        let b = collect_dataset(&net, &world, 200, InputSource::Activations, &s, 9).unwrap();
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
    }

    #[test]
    fn single_class_collection_is_an_error() {
        let world = GridWorld::new(EnvConfig::default()).unwrap();
        let net = agent(&world);
        // a few states right after reset are all calm
        let s = CollectionSettings {
            epsilon: 0.0,
            sample_prob: 1.0,
        };
        let r = collect_dataset(&net, &world, 2, InputSource::QValues, &s, 0);
        assert!(matches!(r, Err(Error::Collection(_))));
    }
}

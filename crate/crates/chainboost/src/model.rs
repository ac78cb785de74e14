//! Domain types: label spaces, observation sequences, partial labelings,
//! features, and models, plus exact evaluation of single features and of the
//! global score F(x, y).
//!
//! All types are immutable after construction and safe to share across
//! threads; trainers mutate weights through a crate-private accessor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of derived observation channels: (X, Y, u_X, u_Y, speed).
pub const NUM_CHANNELS: usize = 5;

/// The ordered activity-label alphabet. Labels are referenced by dense index
/// everywhere; names only matter at the serialization boundary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSpace {
    names: Vec<String>,
}

impl LabelSpace {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::TooFewLabels(names.len()));
        }
        for (i, name) in names.iter().enumerate() {
            if names[..i].contains(name) {
                return Err(Error::DuplicateLabelName(name.clone()));
            }
        }
        Ok(Self { names })
    }

    pub fn size(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// A raw 2-D track together with its derived 5-channel feature matrix
/// g(x, τ) = (X, Y, u_X, u_Y, s).
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSequence {
    track: Vec<[f64; 2]>,
    channels: Vec<[f64; NUM_CHANNELS]>,
}

impl ObservationSequence {
    /// Derives the channel matrix from a position track. Velocities are
    /// backward differences with u(0) = (0, 0).
    pub fn from_track(track: Vec<[f64; 2]>) -> Result<Self> {
        let channels = crate::features::extract_obs_features(&track)?;
        Ok(Self { track, channels })
    }

    /// Pairs a track with an externally produced channel matrix (used by
    /// normalization). Lengths must match and every value must be finite.
    pub fn with_channels(track: Vec<[f64; 2]>, channels: Vec<[f64; NUM_CHANNELS]>) -> Result<Self> {
        if track.is_empty() || channels.is_empty() {
            return Err(Error::EmptyTrack);
        }
        if track.len() != channels.len() {
            return Err(Error::LengthMismatch {
                labeling: channels.len(),
                sequence: track.len(),
            });
        }
        for (t, row) in channels.iter().enumerate() {
            for (m, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFiniteChannel { slice: t, channel: m });
                }
            }
        }
        Ok(Self { track, channels })
    }

    /// Number of time slices T.
    pub fn len(&self) -> usize {
        self.track.len()
    }

    pub fn is_empty(&self) -> bool {
        self.track.is_empty()
    }

    pub fn track(&self) -> &[[f64; 2]] {
        &self.track
    }

    pub fn channels(&self) -> &[[f64; NUM_CHANNELS]] {
        &self.channels
    }

    /// g_m(x, τ).
    #[inline]
    pub fn channel(&self, t: usize, m: usize) -> f64 {
        self.channels[t][m]
    }

    /// g_m(x, τ+ε) with τ+ε clamped into [0, T-1].
    #[inline]
    pub fn channel_at_offset(&self, t: usize, offset: isize, m: usize) -> f64 {
        let idx = (t as isize + offset).clamp(0, self.len() as isize - 1) as usize;
        self.channels[idx][m]
    }

    /// Returns a copy with z-scored channels; the raw track is kept.
    pub fn normalized(&self, stats: &NormStats) -> Self {
        Self {
            track: self.track.clone(),
            channels: crate::features::normalize(&self.channels, stats),
        }
    }
}

/// Per-channel mean and standard deviation used to normalize g. Standard
/// deviations are strictly positive by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    mean: [f64; NUM_CHANNELS],
    std: [f64; NUM_CHANNELS],
}

impl NormStats {
    pub fn new(mean: [f64; NUM_CHANNELS], std: [f64; NUM_CHANNELS]) -> Result<Self> {
        for (m, s) in std.iter().enumerate() {
            if !(s.is_finite() && *s > 0.0) {
                return Err(Error::NonPositiveStd(m));
            }
            if !mean[m].is_finite() {
                return Err(Error::NonFiniteChannel { slice: 0, channel: m });
            }
        }
        Ok(Self { mean, std })
    }

    /// mean 0, std 1: normalization becomes the identity.
    pub fn identity() -> Self {
        Self {
            mean: [0.0; NUM_CHANNELS],
            std: [1.0; NUM_CHANNELS],
        }
    }

    /// Fits per-channel moments over every slice of the given sequences.
    /// Channels with zero spread fall back to std = 1; their indices are
    /// returned so callers can warn about the degenerate channel.
    pub fn fit(sequences: &[ObservationSequence]) -> (Self, Vec<usize>) {
        let total: usize = sequences.iter().map(|s| s.len()).sum();
        let mut mean = [0.0; NUM_CHANNELS];
        let mut std = [1.0; NUM_CHANNELS];
        let mut degenerate = Vec::new();
        if total == 0 {
            return (Self { mean, std }, (0..NUM_CHANNELS).collect());
        }
        let n = total as f64;
        for m in 0..NUM_CHANNELS {
            let sum: f64 = sequences
                .iter()
                .flat_map(|s| s.channels().iter())
                .map(|row| row[m])
                .sum();
            mean[m] = sum / n;
            let var: f64 = sequences
                .iter()
                .flat_map(|s| s.channels().iter())
                .map(|row| (row[m] - mean[m]).powi(2))
                .sum::<f64>()
                / n;
            let sd = var.sqrt();
            if sd > 0.0 {
                std[m] = sd;
            } else {
                degenerate.push(m);
            }
        }
        (Self { mean, std }, degenerate)
    }

    pub fn mean(&self) -> &[f64; NUM_CHANNELS] {
        &self.mean
    }

    pub fn std(&self) -> &[f64; NUM_CHANNELS] {
        &self.std
    }
}

/// Per-slice visible/hidden split y = (v, h): `Some(label)` is an observed
/// slice, `None` a hidden one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartialLabeling {
    slots: Vec<Option<usize>>,
}

impl PartialLabeling {
    pub fn from_slots(slots: Vec<Option<usize>>) -> Self {
        Self { slots }
    }

    pub fn fully_observed(labels: &[usize]) -> Self {
        Self {
            slots: labels.iter().map(|&l| Some(l)).collect(),
        }
    }

    pub fn all_hidden(len: usize) -> Self {
        Self {
            slots: vec![None; len],
        }
    }

    /// Keeps `labels[t]` where `observed[t]` is true, hides the rest.
    pub fn from_mask(labels: &[usize], observed: &[bool]) -> Result<Self> {
        if labels.len() != observed.len() {
            return Err(Error::LengthMismatch {
                labeling: observed.len(),
                sequence: labels.len(),
            });
        }
        Ok(Self {
            slots: labels
                .iter()
                .zip(observed)
                .map(|(&l, &o)| if o { Some(l) } else { None })
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    #[inline]
    pub fn slot(&self, t: usize) -> Option<usize> {
        self.slots[t]
    }

    pub fn slots(&self) -> &[Option<usize>] {
        &self.slots
    }

    pub fn observed_count(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn is_all_hidden(&self) -> bool {
        self.slots.iter().all(|s| s.is_none())
    }

    pub fn is_fully_observed(&self) -> bool {
        self.slots.iter().all(|s| s.is_some())
    }

    /// Checks every observed index against the label-space size.
    pub fn validate_labels(&self, size: usize) -> Result<()> {
        for slot in &self.slots {
            if let Some(l) = slot {
                if *l >= size {
                    return Err(Error::LabelOutOfRange { label: *l, size });
                }
            }
        }
        Ok(())
    }
}

/// Which clique type a feature attaches to: single nodes or adjacent pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CliqueKind {
    Node,
    Edge,
}

/// Parameters of one indicator-style weak hypothesis. The clique kind is
/// implied: only `DataAssoc` lives on node cliques.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureParams {
    /// δ[y_τ = label] · g_channel(x, τ)
    DataAssoc { label: usize, channel: usize },
    /// δ[y_{τ-1} = y_τ] · δ[y_τ = label]
    PersistLabel { label: usize },
    /// δ[y_{τ-1} = prev] · δ[y_τ = cur] · g_channel(x, τ)
    Transition { prev: usize, cur: usize, channel: usize },
    /// δ[y_{τ-1} = prev] · δ[y_τ = cur] · g_channel(x, τ+offset), offset clamped
    Context {
        prev: usize,
        cur: usize,
        channel: usize,
        offset: isize,
    },
    /// δ[y_{τ-1} = prev] · δ[y_τ = cur]
    BridgeLabel { prev: usize, cur: usize },
}

/// One weak hypothesis f_k with its dense id.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Feature {
    id: usize,
    params: FeatureParams,
}

impl Feature {
    pub fn new(id: usize, params: FeatureParams) -> Self {
        Self { id, params }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn params(&self) -> FeatureParams {
        self.params
    }

    pub fn clique_kind(&self) -> CliqueKind {
        match self.params {
            FeatureParams::DataAssoc { .. } => CliqueKind::Node,
            _ => CliqueKind::Edge,
        }
    }

    /// True for features whose value is a pure label-pair indicator; these
    /// are the entries the transition-recovery readout consumes.
    pub fn label_pair(&self) -> Option<(usize, usize)> {
        match self.params {
            FeatureParams::PersistLabel { label } => Some((label, label)),
            FeatureParams::BridgeLabel { prev, cur } => Some((prev, cur)),
            _ => None,
        }
    }
}

/// One clique assignment: (τ, y_τ) for nodes, (τ, y_{τ-1}, y_τ) with τ ≥ 1
/// for edges.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Clique {
    Node { t: usize, label: usize },
    Edge { t: usize, prev: usize, cur: usize },
}

/// Evaluates f_k on one clique assignment. Returns 0 when the label predicate
/// does not fire or when the clique kind does not match the feature's kind.
///
/// Panics if τ is out of range for the sequence (contract violation).
pub fn eval_feature(feature: &Feature, x: &ObservationSequence, clique: Clique) -> f64 {
    match (feature.params(), clique) {
        (FeatureParams::DataAssoc { label, channel }, Clique::Node { t, label: y }) => {
            assert!(t < x.len(), "node clique index {t} out of range");
            if y == label {
                x.channel(t, channel)
            } else {
                0.0
            }
        }
        (FeatureParams::PersistLabel { label }, Clique::Edge { t, prev, cur }) => {
            assert!(t >= 1 && t < x.len(), "edge clique index {t} out of range");
            if prev == cur && cur == label {
                1.0
            } else {
                0.0
            }
        }
        (FeatureParams::Transition { prev: l1, cur: l2, channel }, Clique::Edge { t, prev, cur }) => {
            assert!(t >= 1 && t < x.len(), "edge clique index {t} out of range");
            if prev == l1 && cur == l2 {
                x.channel(t, channel)
            } else {
                0.0
            }
        }
        (
            FeatureParams::Context { prev: l1, cur: l2, channel, offset },
            Clique::Edge { t, prev, cur },
        ) => {
            assert!(t >= 1 && t < x.len(), "edge clique index {t} out of range");
            if prev == l1 && cur == l2 {
                x.channel_at_offset(t, offset, channel)
            } else {
                0.0
            }
        }
        (FeatureParams::BridgeLabel { prev: l1, cur: l2 }, Clique::Edge { t, prev, cur }) => {
            assert!(t >= 1 && t < x.len(), "edge clique index {t} out of range");
            if prev == l1 && cur == l2 {
                1.0
            } else {
                0.0
            }
        }
        // Kind mismatch: the feature contributes nothing on this clique type.
        _ => 0.0,
    }
}

/// A feature list with weights λ and the normalization statistics the model
/// was trained with. F(x, y) = Σ_k λ_k f_k(x, y).
#[derive(Clone, Debug)]
pub struct Model {
    label_space: LabelSpace,
    features: Vec<Feature>,
    weights: Vec<f64>,
    norm_stats: NormStats,
}

impl Model {
    /// A zero-weight model.
    pub fn new(label_space: LabelSpace, features: Vec<Feature>, norm_stats: NormStats) -> Self {
        let weights = vec![0.0; features.len()];
        Self {
            label_space,
            features,
            weights,
            norm_stats,
        }
    }

    pub fn with_weights(
        label_space: LabelSpace,
        features: Vec<Feature>,
        weights: Vec<f64>,
        norm_stats: NormStats,
    ) -> Result<Self> {
        if weights.len() != features.len() {
            return Err(Error::LengthMismatch {
                labeling: weights.len(),
                sequence: features.len(),
            });
        }
        for (k, feature) in features.iter().enumerate() {
            if feature.id() != k {
                return Err(Error::BadConfig(format!(
                    "feature ids must be dense: position {k} holds id {}",
                    feature.id()
                )));
            }
        }
        Ok(Self {
            label_space,
            features,
            weights,
            norm_stats,
        })
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn norm_stats(&self) -> &NormStats {
        &self.norm_stats
    }

    pub fn active_feature_count(&self) -> usize {
        self.weights.iter().filter(|w| **w != 0.0).count()
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }
}

/// Computes F(x, y) = Σ_k λ_k Σ_c f_k(x, y_c) over node cliques τ = 0..T-1
/// and edge cliques τ = 1..T-1.
///
/// Panics when y does not cover the sequence or contains an out-of-range
/// label (contract violation).
pub fn score_assignment(model: &Model, x: &ObservationSequence, y: &[usize]) -> f64 {
    assert_eq!(y.len(), x.len(), "assignment length must equal T");
    let size = model.label_space().size();
    assert!(y.iter().all(|&l| l < size), "label out of range");
    let mut total = 0.0;
    for (feature, &w) in model.features().iter().zip(model.weights()) {
        if w == 0.0 {
            continue;
        }
        let mut sum = 0.0;
        match feature.clique_kind() {
            CliqueKind::Node => {
                for (t, &label) in y.iter().enumerate() {
                    sum += eval_feature(feature, x, Clique::Node { t, label });
                }
            }
            CliqueKind::Edge => {
                for t in 1..y.len() {
                    sum += eval_feature(
                        feature,
                        x,
                        Clique::Edge {
                            t,
                            prev: y[t - 1],
                            cur: y[t],
                        },
                    );
                }
            }
        }
        total += w * sum;
    }
    total
}

/// One training example: an observation sequence paired with the partial
/// labeling of its slices.
#[derive(Clone, Debug)]
pub struct TrainingSequence {
    pub obs: ObservationSequence,
    pub clamp: PartialLabeling,
}

impl TrainingSequence {
    pub fn new(obs: ObservationSequence, clamp: PartialLabeling) -> Result<Self> {
        if obs.len() != clamp.len() {
            return Err(Error::LengthMismatch {
                labeling: clamp.len(),
                sequence: obs.len(),
            });
        }
        Ok(Self { obs, clamp })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{build_feature_set, FeatureSetKind};
    use crate::inference::build_potentials;
    use crate::test_util::random_model_with_track;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn labels(n: usize) -> LabelSpace {
        LabelSpace::new((0..n).map(|i| format!("l{i}")).collect()).unwrap()
    }

    #[test]
    fn label_space_rejects_duplicates_and_singletons() {
        assert!(LabelSpace::new(vec!["a".into()]).is_err());
        assert!(LabelSpace::new(vec!["a".into(), "a".into()]).is_err());
        let ls = labels(3);
        assert_eq!(ls.size(), 3);
        assert_eq!(ls.index_of("l2"), Some(2));
    }

    #[test]
    fn data_assoc_fires_on_matching_label() {
        let x = ObservationSequence::from_track(vec![[0.0, 0.0], [3.0, 4.0]]).unwrap();
        let f = Feature::new(0, FeatureParams::DataAssoc { label: 2, channel: 4 });
        // speed channel at slice 1 is 5 (3-4-5 triangle)
        assert_eq!(eval_feature(&f, &x, Clique::Node { t: 1, label: 2 }), 5.0);
        assert_eq!(eval_feature(&f, &x, Clique::Node { t: 1, label: 1 }), 0.0);
    }

    #[test]
    fn context_offset_clamps_at_boundaries() {
        let track: Vec<[f64; 2]> = (0..5).map(|i| [i as f64, 0.0]).collect();
        let x = ObservationSequence::from_track(track).unwrap();
        let f = Feature::new(
            0,
            FeatureParams::Context { prev: 0, cur: 1, channel: 0, offset: -2 },
        );
        // τ = 1, ε = -2 clamps to slice 0, whose X channel is 0.
        let got = eval_feature(&f, &x, Clique::Edge { t: 1, prev: 0, cur: 1 });
        assert_eq!(got, x.channel(0, 0));
        let late = Feature::new(
            0,
            FeatureParams::Context { prev: 0, cur: 1, channel: 0, offset: 7 },
        );
        let got = eval_feature(&late, &x, Clique::Edge { t: 4, prev: 0, cur: 1 });
        assert_eq!(got, x.channel(4, 0));
    }

    #[test]
    fn score_is_zero_under_zero_weights() {
        let ls = labels(3);
        let features = build_feature_set(FeatureSetKind::Persistence, &ls).unwrap();
        let x = ObservationSequence::from_track(vec![[0.0, 0.0], [0.1, 0.1], [0.2, 0.2]]).unwrap();
        let model = Model::new(ls, features, NormStats::identity());
        assert_eq!(score_assignment(&model, &x, &[0, 1, 2]), 0.0);
    }

    #[test]
    fn persist_feature_counts_edges() {
        let ls = labels(3);
        let features = vec![Feature::new(0, FeatureParams::PersistLabel { label: 1 })];
        let model =
            Model::with_weights(ls, features, vec![2.0], NormStats::identity()).unwrap();
        let track: Vec<[f64; 2]> = (0..4).map(|i| [i as f64 * 0.1, 0.0]).collect();
        let x = ObservationSequence::from_track(track).unwrap();
        // y constant = 1 over T=4: three persisting edges, each worth 2.
        assert_eq!(score_assignment(&model, &x, &[1, 1, 1, 1]), 6.0);
    }

    #[test]
    fn score_matches_potential_table_route() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..50 {
            let num_labels = rng.random_range(2..=4);
            let t_len = rng.random_range(1..=6);
            let (model, x) = random_model_with_track(&mut rng, num_labels, t_len);
            let y: Vec<usize> = (0..t_len).map(|_| rng.random_range(0..num_labels)).collect();
            let direct = score_assignment(&model, &x, &y);
            let pots = build_potentials(&model, &x).unwrap();
            let mut via_table: f64 = (0..t_len).map(|t| pots.node(t, y[t])).sum();
            for e in 0..t_len.saturating_sub(1) {
                via_table += pots.edge(e, y[e], y[e + 1]);
            }
            assert!(
                (direct - via_table).abs() < 1e-12,
                "direct {direct} vs table {via_table}"
            );
        }
    }

    #[test]
    fn norm_stats_fit_flags_constant_channels() {
        let track = vec![[0.5, 0.5]; 5];
        let x = ObservationSequence::from_track(track).unwrap();
        let (stats, degenerate) = NormStats::fit(std::slice::from_ref(&x));
        // every channel is constant on a stationary track
        assert_eq!(degenerate, vec![0, 1, 2, 3, 4]);
        let normalized = x.normalized(&stats);
        for row in normalized.channels() {
            for v in row {
                assert_eq!(*v, 0.0);
            }
        }
    }

    proptest! {
        // eval_feature stays within max |g| (indicators within 1).
        #[test]
        fn eval_feature_is_bounded(seed in 0u64..500) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let num_labels = rng.random_range(2..=4);
            let t_len = rng.random_range(2..=6);
            let (model, x) = random_model_with_track(&mut rng, num_labels, t_len);
            let max_g = x
                .channels()
                .iter()
                .flat_map(|row| row.iter())
                .fold(0.0f64, |acc, v| acc.max(v.abs()))
                .max(1.0);
            for feature in model.features() {
                for t in 1..t_len {
                    for prev in 0..num_labels {
                        for cur in 0..num_labels {
                            let v = eval_feature(feature, &x, Clique::Edge { t, prev, cur });
                            prop_assert!(v.abs() <= max_g + 1e-12);
                        }
                    }
                }
                for t in 0..t_len {
                    for label in 0..num_labels {
                        let v = eval_feature(feature, &x, Clique::Node { t, label });
                        prop_assert!(v.abs() <= max_g + 1e-12);
                    }
                }
            }
        }
    }
}

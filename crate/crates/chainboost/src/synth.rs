//! Seeded generator of synthetic activity-trajectory datasets plus the
//! random label-masking protocol. Each sequence draws from its own ChaCha12
//! stream, so regeneration is byte-identical for a fixed seed and sequences
//! are independent of each other and of the train/test split sizes.

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PartialLabeling;

/// Name of the pseudo-random generator recorded in dataset headers.
pub const RNG_NAME: &str = "chacha12";

/// Scenario description: landmarks, activities as landmark-pair movements,
/// the 0/1 activity-transition adjacency (self-loops on the diagonal), and
/// sampling parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub label_names: Vec<String>,
    /// 2-D points in the unit square.
    pub landmarks: Vec<[f64; 2]>,
    /// Per activity: (from-landmark, to-landmark).
    pub activities: Vec<(usize, usize)>,
    /// |Y|×|Y| 0/1 adjacency; row = current activity, column = successor.
    pub transition: Vec<Vec<u8>>,
    /// Slices spent on one activity segment, inclusive bounds.
    pub duration_range: (usize, usize),
    /// Activity segments per sequence, inclusive bounds; a walk ends early
    /// at an absorbing activity (no successor other than itself).
    pub segments_range: (usize, usize),
    /// Isotropic Gaussian positional noise scale.
    pub noise_std: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    /// The default scenario: five activities moving between five landmarks
    /// on a cross pattern, wired with the transition structure
    ///   1 -> {1,2}, 2 -> {2,3,11}, 3 -> {3,4}, 4 -> {4}, 11 -> {11}.
    pub fn short_meal(seed: u64) -> Self {
        let west = [0.1, 0.5];
        let center = [0.5, 0.5];
        let north = [0.5, 0.9];
        let east = [0.9, 0.5];
        let south = [0.5, 0.1];
        Self {
            label_names: vec!["1".into(), "2".into(), "3".into(), "4".into(), "11".into()],
            landmarks: vec![west, center, north, east, south],
            // 1: W->C, 2: C->N, 3: N->E, 4: E->S, 11: N->W
            activities: vec![(0, 1), (1, 2), (2, 3), (3, 4), (2, 0)],
            transition: vec![
                vec![1, 1, 0, 0, 0],
                vec![0, 1, 1, 0, 1],
                vec![0, 0, 1, 1, 0],
                vec![0, 0, 0, 1, 0],
                vec![0, 0, 0, 0, 1],
            ],
            duration_range: (8, 15),
            segments_range: (3, 6),
            noise_std: 0.02,
            n_train: 42,
            n_test: 44,
            seed,
        }
    }

    pub fn num_activities(&self) -> usize {
        self.activities.len()
    }

    pub fn validate(&self) -> Result<()> {
        let y = self.activities.len();
        if y < 2 {
            return Err(Error::BadScenario(format!("need at least 2 activities, got {y}")));
        }
        if self.label_names.len() != y {
            return Err(Error::BadScenario(format!(
                "{} label names for {y} activities",
                self.label_names.len()
            )));
        }
        for (i, name) in self.label_names.iter().enumerate() {
            if self.label_names[..i].contains(name) {
                return Err(Error::BadScenario(format!("duplicate label name `{name}`")));
            }
        }
        for (i, p) in self.landmarks.iter().enumerate() {
            if !(0.0..=1.0).contains(&p[0]) || !(0.0..=1.0).contains(&p[1]) {
                return Err(Error::BadScenario(format!(
                    "landmark {i} ({}, {}) lies outside the unit square",
                    p[0], p[1]
                )));
            }
        }
        for (a, &(from, to)) in self.activities.iter().enumerate() {
            if from >= self.landmarks.len() || to >= self.landmarks.len() {
                return Err(Error::BadScenario(format!(
                    "activity {a} references a missing landmark"
                )));
            }
        }
        if self.transition.len() != y || self.transition.iter().any(|row| row.len() != y) {
            return Err(Error::BadScenario(format!("transition matrix must be {y}x{y}")));
        }
        for (a, row) in self.transition.iter().enumerate() {
            if row.iter().any(|&v| v > 1) {
                return Err(Error::BadScenario(format!("transition row {a} is not 0/1")));
            }
            if row[a] != 1 {
                return Err(Error::BadScenario(format!("transition row {a} lacks its self-loop")));
            }
            if row.iter().all(|&v| v == 0) {
                return Err(Error::BadScenario(format!(
                    "activity {a} has no allowed successor (unreachable row)"
                )));
            }
        }
        if self.duration_range.0 < 2 || self.duration_range.0 > self.duration_range.1 {
            return Err(Error::BadScenario(format!(
                "duration range ({}, {}) needs 2 <= min <= max",
                self.duration_range.0, self.duration_range.1
            )));
        }
        if self.segments_range.0 < 1 || self.segments_range.0 > self.segments_range.1 {
            return Err(Error::BadScenario(format!(
                "segments range ({}, {}) needs 1 <= min <= max",
                self.segments_range.0, self.segments_range.1
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::BadScenario(format!("noise_std {} must be >= 0", self.noise_std)));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::BadScenario("n_train and n_test must be positive".into()));
        }
        Ok(())
    }
}

/// One generated sequence: the noisy track and the ground-truth label per
/// slice.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedSequence {
    pub track: Vec<[f64; 2]>,
    pub labels: Vec<usize>,
}

/// Train/test collections generated from one scenario.
#[derive(Clone, Debug)]
pub struct GeneratedDataset {
    pub spec: ScenarioSpec,
    pub train: Vec<GeneratedSequence>,
    pub test: Vec<GeneratedSequence>,
}

fn generate_sequence(spec: &ScenarioSpec, stream: u64) -> GeneratedSequence {
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let n_segments = rng.random_range(spec.segments_range.0..=spec.segments_range.1);
    let mut activity = rng.random_range(0..spec.num_activities());
    let mut track = Vec::new();
    let mut labels = Vec::new();
    for segment in 0..n_segments {
        let duration = rng.random_range(spec.duration_range.0..=spec.duration_range.1);
        let (from, to) = spec.activities[activity];
        let a = spec.landmarks[from];
        let b = spec.landmarks[to];
        for j in 0..duration {
            let frac = j as f64 / (duration - 1) as f64;
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            track.push([
                a[0] + (b[0] - a[0]) * frac + spec.noise_std * nx,
                a[1] + (b[1] - a[1]) * frac + spec.noise_std * ny,
            ]);
            labels.push(activity);
        }
        if segment + 1 == n_segments {
            break;
        }
        // successors other than the current activity; staying put is already
        // expressed by segment durations, and an activity whose only
        // successor is itself absorbs the walk
        let successors: Vec<usize> = (0..spec.num_activities())
            .filter(|&l| l != activity && spec.transition[activity][l] == 1)
            .collect();
        if successors.is_empty() {
            break;
        }
        activity = successors[rng.random_range(0..successors.len())];
    }
    GeneratedSequence { track, labels }
}

/// Generates `n_train` + `n_test` sequences; sequence i draws from ChaCha12
/// stream i (test sequences continue the stream numbering after the training
/// ones), so output is deterministic in the seed.
pub fn generate_dataset(spec: &ScenarioSpec) -> Result<GeneratedDataset> {
    spec.validate()?;
    let train = (0..spec.n_train)
        .map(|i| generate_sequence(spec, i as u64))
        .collect();
    let test = (0..spec.n_test)
        .map(|j| generate_sequence(spec, (spec.n_train + j) as u64))
        .collect();
    Ok(GeneratedDataset { spec: spec.clone(), train, test })
}

/// Keeps a uniformly random ⌈fraction·T⌉-subset of each sequence's slices
/// observed and hides the rest; at least one slot stays observed. Sequence i
/// draws from ChaCha12 stream i of `seed`.
pub fn mask_labels(
    sequences: &[GeneratedSequence],
    fraction: f64,
    seed: u64,
) -> Result<Vec<PartialLabeling>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::BadFraction(fraction));
    }
    Ok(sequences
        .iter()
        .enumerate()
        .map(|(i, seq)| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let t_len = seq.labels.len();
            let keep = ((fraction * t_len as f64).ceil() as usize).clamp(1, t_len);
            let chosen = rand::seq::index::sample(&mut rng, t_len, keep);
            let mut observed = vec![false; t_len];
            for idx in chosen.iter() {
                observed[idx] = true;
            }
            PartialLabeling::from_mask(&seq.labels, &observed).unwrap()
        })
        .collect())
}

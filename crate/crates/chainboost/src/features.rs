//! Observation-channel extraction, normalization, and construction of the
//! four feature sets (persistence, transition, context, bridge).

use crate::error::{Error, Result};
use crate::model::{Feature, FeatureParams, LabelSpace, NormStats, NUM_CHANNELS};

/// Which feature set to build. The context window must be odd and >= 1;
/// `Context { window: 1 }` coincides with `Transition`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureSetKind {
    Persistence,
    Transition,
    Context { window: usize },
    Bridge,
}

impl FeatureSetKind {
    /// Closed-form feature count for a label space of the given size.
    pub fn expected_count(&self, num_labels: usize) -> usize {
        let y = num_labels;
        match self {
            FeatureSetKind::Persistence => NUM_CHANNELS * y + y,
            FeatureSetKind::Transition => NUM_CHANNELS * y * y,
            FeatureSetKind::Context { window } => NUM_CHANNELS * window * y * y,
            FeatureSetKind::Bridge => NUM_CHANNELS * y + y * y,
        }
    }
}

/// Derives the 5-channel matrix (X, Y, u_X, u_Y, s) from a position track.
/// Velocities are backward differences with u(0) = (0, 0); the speed channel
/// is s = sqrt(u_X² + u_Y²).
pub fn extract_obs_features(track: &[[f64; 2]]) -> Result<Vec<[f64; NUM_CHANNELS]>> {
    if track.is_empty() {
        return Err(Error::EmptyTrack);
    }
    let mut channels = Vec::with_capacity(track.len());
    for (t, p) in track.iter().enumerate() {
        let (ux, uy) = if t == 0 {
            (0.0, 0.0)
        } else {
            (p[0] - track[t - 1][0], p[1] - track[t - 1][1])
        };
        let row = [p[0], p[1], ux, uy, ux.hypot(uy)];
        for (m, v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteChannel { slice: t, channel: m });
            }
        }
        channels.push(row);
    }
    Ok(channels)
}

/// Per-channel z-score using previously fitted statistics.
pub fn normalize(
    channels: &[[f64; NUM_CHANNELS]],
    stats: &NormStats,
) -> Vec<[f64; NUM_CHANNELS]> {
    channels
        .iter()
        .map(|row| {
            let mut out = [0.0; NUM_CHANNELS];
            for m in 0..NUM_CHANNELS {
                out[m] = (row[m] - stats.mean()[m]) / stats.std()[m];
            }
            out
        })
        .collect()
}

/// Builds a feature set with dense ids in lexicographic order over
/// (kind block, l1, l2, channel, offset).
pub fn build_feature_set(kind: FeatureSetKind, labels: &LabelSpace) -> Result<Vec<Feature>> {
    let y = labels.size();
    let mut params = Vec::new();
    match kind {
        FeatureSetKind::Persistence => {
            push_data_assoc(&mut params, y);
            for label in 0..y {
                params.push(FeatureParams::PersistLabel { label });
            }
        }
        FeatureSetKind::Transition => {
            for prev in 0..y {
                for cur in 0..y {
                    for channel in 0..NUM_CHANNELS {
                        params.push(FeatureParams::Transition { prev, cur, channel });
                    }
                }
            }
        }
        FeatureSetKind::Context { window } => {
            if window % 2 == 0 || window == 0 {
                return Err(Error::BadWindow(window));
            }
            let half = (window as isize - 1) / 2;
            for prev in 0..y {
                for cur in 0..y {
                    for channel in 0..NUM_CHANNELS {
                        for offset in -half..=half {
                            params.push(FeatureParams::Context { prev, cur, channel, offset });
                        }
                    }
                }
            }
        }
        FeatureSetKind::Bridge => {
            push_data_assoc(&mut params, y);
            for prev in 0..y {
                for cur in 0..y {
                    params.push(FeatureParams::BridgeLabel { prev, cur });
                }
            }
        }
    }
    debug_assert_eq!(params.len(), kind.expected_count(y));
    Ok(params
        .into_iter()
        .enumerate()
        .map(|(id, p)| Feature::new(id, p))
        .collect())
}

fn push_data_assoc(params: &mut Vec<FeatureParams>, y: usize) {
    for label in 0..y {
        for channel in 0..NUM_CHANNELS {
            params.push(FeatureParams::DataAssoc { label, channel });
        }
    }
}

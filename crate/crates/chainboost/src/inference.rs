//! Exact log-domain inference on the linear chain: partition functions
//! (clamped and unclamped), clique marginals, conditional probability of the
//! visible labels, Viterbi decoding, and a brute-force enumeration oracle.
//!
//! Clamping is support restriction: at an observed slice only the observed
//! label participates in the sums, so one forward-backward routine serves the
//! clamped and unclamped cases. T = 1 chains are legal; they simply have no
//! edge cliques.

use crate::error::{Error, Result};
use crate::math::log_sum_exp;
use crate::model::{
    eval_feature, score_assignment, Clique, CliqueKind, Feature, FeatureParams, Model,
    ObservationSequence, PartialLabeling,
};

/// Maximum |Y|^T the enumeration oracle accepts.
pub const ENUMERATION_LIMIT: f64 = 1e6;

/// Tabulated clique scores: node_scores[τ][y] and edge_scores[e][a][b] where
/// edge e joins slices e and e+1.
#[derive(Clone, Debug)]
pub struct PotentialTable {
    len: usize,
    num_labels: usize,
    node: Vec<f64>,
    edge: Vec<f64>,
}

impl PotentialTable {
    pub(crate) fn zeros(len: usize, num_labels: usize) -> Self {
        Self {
            len,
            num_labels,
            node: vec![0.0; len * num_labels],
            edge: vec![0.0; len.saturating_sub(1) * num_labels * num_labels],
        }
    }

    /// Number of slices T.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    #[inline]
    pub fn node(&self, t: usize, y: usize) -> f64 {
        self.node[t * self.num_labels + y]
    }

    #[inline]
    pub fn edge(&self, e: usize, a: usize, b: usize) -> f64 {
        self.edge[(e * self.num_labels + a) * self.num_labels + b]
    }

    #[inline]
    pub(crate) fn add_node(&mut self, t: usize, y: usize, delta: f64) {
        self.node[t * self.num_labels + y] += delta;
    }

    #[inline]
    pub(crate) fn add_edge(&mut self, e: usize, a: usize, b: usize, delta: f64) {
        self.edge[(e * self.num_labels + a) * self.num_labels + b] += delta;
    }
}

/// Adds `delta · f_k(x, ·)` to all cells the feature touches.
pub(crate) fn add_feature_to_potentials(
    pots: &mut PotentialTable,
    feature: &Feature,
    x: &ObservationSequence,
    delta: f64,
) {
    let t_len = x.len();
    match feature.params() {
        FeatureParams::DataAssoc { label, channel } => {
            for t in 0..t_len {
                pots.add_node(t, label, delta * x.channel(t, channel));
            }
        }
        FeatureParams::PersistLabel { label } => {
            for e in 0..t_len.saturating_sub(1) {
                pots.add_edge(e, label, label, delta);
            }
        }
        FeatureParams::Transition { prev, cur, channel } => {
            for e in 0..t_len.saturating_sub(1) {
                pots.add_edge(e, prev, cur, delta * x.channel(e + 1, channel));
            }
        }
        FeatureParams::Context { prev, cur, channel, offset } => {
            for e in 0..t_len.saturating_sub(1) {
                pots.add_edge(e, prev, cur, delta * x.channel_at_offset(e + 1, offset, channel));
            }
        }
        FeatureParams::BridgeLabel { prev, cur } => {
            for e in 0..t_len.saturating_sub(1) {
                pots.add_edge(e, prev, cur, delta);
            }
        }
    }
}

/// Tabulates Σ_k λ_k f_k per node and edge clique. Rejects non-finite
/// weights, naming the offending feature.
pub fn build_potentials(model: &Model, x: &ObservationSequence) -> Result<PotentialTable> {
    let mut pots = PotentialTable::zeros(x.len(), model.label_space().size());
    for (feature, &w) in model.features().iter().zip(model.weights()) {
        if !w.is_finite() {
            return Err(Error::NonFiniteWeight { feature: feature.id() });
        }
        if w == 0.0 {
            continue;
        }
        add_feature_to_potentials(&mut pots, feature, x, w);
    }
    Ok(pots)
}

/// Log-partition value plus node and edge clique marginals under an optional
/// clamp. All-hidden clamp gives the unclamped posterior.
#[derive(Clone, Debug)]
pub struct ChainPosteriors {
    pub log_z: f64,
    len: usize,
    num_labels: usize,
    node: Vec<f64>,
    edge: Vec<f64>,
    clamp: PartialLabeling,
}

impl ChainPosteriors {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    #[inline]
    pub fn node_marginal(&self, t: usize, y: usize) -> f64 {
        self.node[t * self.num_labels + y]
    }

    #[inline]
    pub fn edge_marginal(&self, e: usize, a: usize, b: usize) -> f64 {
        self.edge[(e * self.num_labels + a) * self.num_labels + b]
    }

    pub fn clamp(&self) -> &PartialLabeling {
        &self.clamp
    }
}

#[inline]
fn allowed(clamp: &PartialLabeling, t: usize, num_labels: usize) -> std::ops::Range<usize> {
    match clamp.slot(t) {
        Some(v) => v..v + 1,
        None => 0..num_labels,
    }
}

/// Forward-backward in the log domain. Observed slots restrict the support
/// at their slice; `log_z` is the clamped log-partition.
pub fn posteriors(pots: &PotentialTable, clamp: &PartialLabeling) -> ChainPosteriors {
    assert_eq!(clamp.len(), pots.len(), "clamp length must equal T");
    let t_len = pots.len();
    let y = pots.num_labels();
    let mut alpha = vec![f64::NEG_INFINITY; t_len * y];
    let mut beta = vec![f64::NEG_INFINITY; t_len * y];
    let mut scratch = Vec::with_capacity(y);

    for l in allowed(clamp, 0, y) {
        alpha[l] = pots.node(0, l);
    }
    for t in 1..t_len {
        for b in allowed(clamp, t, y) {
            scratch.clear();
            for a in allowed(clamp, t - 1, y) {
                scratch.push(alpha[(t - 1) * y + a] + pots.edge(t - 1, a, b));
            }
            alpha[t * y + b] = pots.node(t, b) + log_sum_exp(&scratch);
        }
    }

    for l in allowed(clamp, t_len - 1, y) {
        beta[(t_len - 1) * y + l] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for a in allowed(clamp, t, y) {
            scratch.clear();
            for b in allowed(clamp, t + 1, y) {
                scratch.push(pots.edge(t, a, b) + pots.node(t + 1, b) + beta[(t + 1) * y + b]);
            }
            beta[t * y + a] = log_sum_exp(&scratch);
        }
    }

    scratch.clear();
    for l in allowed(clamp, t_len - 1, y) {
        scratch.push(alpha[(t_len - 1) * y + l]);
    }
    let log_z = log_sum_exp(&scratch);

    let mut node = vec![0.0; t_len * y];
    for t in 0..t_len {
        for l in allowed(clamp, t, y) {
            node[t * y + l] = (alpha[t * y + l] + beta[t * y + l] - log_z).exp();
        }
    }
    let mut edge = vec![0.0; t_len.saturating_sub(1) * y * y];
    for e in 0..t_len.saturating_sub(1) {
        for a in allowed(clamp, e, y) {
            for b in allowed(clamp, e + 1, y) {
                edge[(e * y + a) * y + b] = (alpha[e * y + a]
                    + pots.edge(e, a, b)
                    + pots.node(e + 1, b)
                    + beta[(e + 1) * y + b]
                    - log_z)
                    .exp();
            }
        }
    }

    ChainPosteriors {
        log_z,
        len: t_len,
        num_labels: y,
        node,
        edge,
        clamp: clamp.clone(),
    }
}

/// Forward-only pass returning just the clamped log-partition.
pub fn log_partition(pots: &PotentialTable, clamp: &PartialLabeling) -> f64 {
    assert_eq!(clamp.len(), pots.len(), "clamp length must equal T");
    let t_len = pots.len();
    let y = pots.num_labels();
    let mut prev = vec![f64::NEG_INFINITY; y];
    let mut next = vec![f64::NEG_INFINITY; y];
    let mut scratch = Vec::with_capacity(y);
    for l in allowed(clamp, 0, y) {
        prev[l] = pots.node(0, l);
    }
    for t in 1..t_len {
        next.fill(f64::NEG_INFINITY);
        for b in allowed(clamp, t, y) {
            scratch.clear();
            for a in allowed(clamp, t - 1, y) {
                scratch.push(prev[a] + pots.edge(t - 1, a, b));
            }
            next[b] = pots.node(t, b) + log_sum_exp(&scratch);
        }
        std::mem::swap(&mut prev, &mut next);
    }
    scratch.clear();
    for l in allowed(clamp, t_len - 1, y) {
        scratch.push(prev[l]);
    }
    log_sum_exp(&scratch)
}

/// log p(v|x) = log Z(v) - log Z. All-hidden v returns 0 by the p(∅) = 1
/// convention.
pub fn conditional_log_prob(model: &Model, x: &ObservationSequence, v: &PartialLabeling) -> Result<f64> {
    if v.is_all_hidden() {
        return Ok(0.0);
    }
    let pots = build_potentials(model, x)?;
    let clamped = log_partition(&pots, v);
    let free = log_partition(&pots, &PartialLabeling::all_hidden(x.len()));
    Ok(clamped - free)
}

/// Maximizer of F(x, y); ties break toward the lower label index at every
/// backtracking step.
pub fn viterbi(model: &Model, x: &ObservationSequence) -> Result<Vec<usize>> {
    let pots = build_potentials(model, x)?;
    Ok(viterbi_decode(&pots))
}

/// Viterbi on a prebuilt potential table.
pub fn viterbi_decode(pots: &PotentialTable) -> Vec<usize> {
    let t_len = pots.len();
    let y = pots.num_labels();
    let mut delta = vec![f64::NEG_INFINITY; t_len * y];
    let mut back = vec![0usize; t_len * y];
    for l in 0..y {
        delta[l] = pots.node(0, l);
    }
    for t in 1..t_len {
        for b in 0..y {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for a in 0..y {
                let cand = delta[(t - 1) * y + a] + pots.edge(t - 1, a, b);
                if cand > best {
                    best = cand;
                    arg = a;
                }
            }
            delta[t * y + b] = pots.node(t, b) + best;
            back[t * y + b] = arg;
        }
    }
    let mut best = f64::NEG_INFINITY;
    let mut label = 0;
    for l in 0..y {
        if delta[(t_len - 1) * y + l] > best {
            best = delta[(t_len - 1) * y + l];
            label = l;
        }
    }
    let mut path = vec![0usize; t_len];
    path[t_len - 1] = label;
    for t in (1..t_len).rev() {
        label = back[t * y + label];
        path[t - 1] = label;
    }
    path
}

/// Extracts channels from a raw track, normalizes them with the model's
/// stored statistics, and Viterbi-decodes.
pub fn decode_track(model: &Model, track: &[[f64; 2]]) -> Result<Vec<usize>> {
    let x = ObservationSequence::from_track(track.to_vec())?.normalized(model.norm_stats());
    viterbi(model, &x)
}

/// Calls `f` once per full assignment consistent with the clamp, in
/// lexicographic order of the hidden slots.
pub fn for_each_assignment(
    clamp: &PartialLabeling,
    num_labels: usize,
    mut f: impl FnMut(&[usize]),
) {
    let mut current: Vec<usize> = clamp.slots().iter().map(|s| s.unwrap_or(0)).collect();
    let hidden: Vec<usize> = (0..clamp.len()).filter(|&t| clamp.slot(t).is_none()).collect();
    loop {
        f(&current);
        let mut i = hidden.len();
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            let p = hidden[i];
            current[p] += 1;
            if current[p] == num_labels {
                current[p] = 0;
            } else {
                break;
            }
        }
    }
}

/// Exact posterior quantities by explicit enumeration of all assignments
/// consistent with the clamp. Scores go through `score_assignment`, keeping
/// this oracle independent of the forward-backward path it checks.
pub fn brute_force_posteriors(
    model: &Model,
    x: &ObservationSequence,
    clamp: &PartialLabeling,
) -> Result<ChainPosteriors> {
    let t_len = x.len();
    let y = model.label_space().size();
    let states = (y as f64).powi(t_len as i32);
    if states > ENUMERATION_LIMIT {
        return Err(Error::InstanceTooLarge { states, limit: ENUMERATION_LIMIT });
    }
    let mut scores = Vec::new();
    for_each_assignment(clamp, y, |assign| {
        scores.push(score_assignment(model, x, assign));
    });
    let log_z = log_sum_exp(&scores);
    let mut node = vec![0.0; t_len * y];
    let mut edge = vec![0.0; t_len.saturating_sub(1) * y * y];
    let mut idx = 0;
    for_each_assignment(clamp, y, |assign| {
        let p = (scores[idx] - log_z).exp();
        idx += 1;
        for (t, &l) in assign.iter().enumerate() {
            node[t * y + l] += p;
        }
        for e in 0..t_len.saturating_sub(1) {
            edge[(e * y + assign[e]) * y + assign[e + 1]] += p;
        }
    });
    Ok(ChainPosteriors {
        log_z,
        len: t_len,
        num_labels: y,
        node,
        edge,
        clamp: clamp.clone(),
    })
}

/// Feature expectation Σ_c Σ_{y_c} p(y_c|x) f_k(x, y_c) under the given
/// clique marginals. This is ∂ log Z / ∂λ_k.
pub fn expected_feature(feature: &Feature, x: &ObservationSequence, post: &ChainPosteriors) -> f64 {
    let t_len = post.len();
    match feature.params() {
        FeatureParams::DataAssoc { label, channel } => (0..t_len)
            .map(|t| post.node_marginal(t, label) * x.channel(t, channel))
            .sum(),
        FeatureParams::PersistLabel { label } => (0..t_len.saturating_sub(1))
            .map(|e| post.edge_marginal(e, label, label))
            .sum(),
        FeatureParams::Transition { prev, cur, channel } => (0..t_len.saturating_sub(1))
            .map(|e| post.edge_marginal(e, prev, cur) * x.channel(e + 1, channel))
            .sum(),
        FeatureParams::Context { prev, cur, channel, offset } => (0..t_len.saturating_sub(1))
            .map(|e| post.edge_marginal(e, prev, cur) * x.channel_at_offset(e + 1, offset, channel))
            .sum(),
        FeatureParams::BridgeLabel { prev, cur } => (0..t_len.saturating_sub(1))
            .map(|e| post.edge_marginal(e, prev, cur))
            .sum(),
    }
}

/// Same expectation computed by looping every clique configuration through
/// `eval_feature`; retained as the slow reference route.
pub fn expected_feature_enumerated(
    feature: &Feature,
    x: &ObservationSequence,
    post: &ChainPosteriors,
) -> f64 {
    let t_len = post.len();
    let y = post.num_labels();
    let mut total = 0.0;
    match feature.clique_kind() {
        CliqueKind::Node => {
            for t in 0..t_len {
                for label in 0..y {
                    let p = post.node_marginal(t, label);
                    if p != 0.0 {
                        total += p * eval_feature(feature, x, Clique::Node { t, label });
                    }
                }
            }
        }
        CliqueKind::Edge => {
            for t in 1..t_len {
                for prev in 0..y {
                    for cur in 0..y {
                        let p = post.edge_marginal(t - 1, prev, cur);
                        if p != 0.0 {
                            total += p * eval_feature(feature, x, Clique::Edge { t, prev, cur });
                        }
                    }
                }
            }
        }
    }
    total
}

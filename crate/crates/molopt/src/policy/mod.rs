//! The decision-maker: a differentiable linear-softmax policy over the
//! discrete edit vocabulary, plus the text-policy adapter for plugging in
//! external generators.
//!
//! Logits are `dot(theta_row(action), features) / tau`. Sampling returns the
//! exact log-probability (recorded as the behavior-policy likelihood for
//! later importance ratios), and `grad_logprob` provides the analytic
//! score-function gradient used by the training objective.

mod edits;

pub use edits::{
    apply_edit, enumerate_legal_edits, EditAction, FragmentLibrary, MAX_CANDIDATES,
    REPLACE_ELEMENTS,
};

use crate::chemgraph::MolecularGraph;
use crate::env::Episode;
use crate::oracle::builtin_property;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("no legal edits for the current molecule")]
    NoLegalEdits,
    #[error("illegal edit: {0}")]
    IllegalEdit(String),
    #[error("fragment library error: {0}")]
    Library(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

/// Number of state features produced by [`featurize`].
pub const FEATURE_LEN: usize = 24;
const TURN_ONEHOT: usize = 8;

/// Fixed-length state features: current-molecule descriptors (size, rings,
/// per-element composition, property proxies), last reward, similarity
/// headroom, and a turn-index one-hot.
pub fn featurize(episode: &Episode) -> Vec<f64> {
    use crate::chemgraph::Element;
    let m = &episode.current().graph;
    let heavy = m.heavy_atom_count() as f64;
    let mut f = Vec::with_capacity(FEATURE_LEN);
    f.push(1.0);
    f.push(heavy / 20.0);
    f.push(m.ring_count() as f64 / 4.0);
    f.push(m.hetero_fraction());
    f.push(m.count_element(Element::C) as f64 / heavy);
    f.push(m.count_element(Element::N) as f64 / heavy);
    f.push(m.count_element(Element::O) as f64 / heavy);
    f.push(m.count_element(Element::S) as f64 / heavy);
    let halogens = [Element::F, Element::Cl, Element::Br, Element::I]
        .iter()
        .map(|&e| m.count_element(e))
        .sum::<usize>() as f64;
    f.push(halogens / heavy);
    f.push(m.atoms().iter().filter(|a| a.aromatic).count() as f64 / heavy);
    f.push(builtin_property("logp_proxy", m).expect("builtin") / 5.0);
    f.push(builtin_property("sa_proxy", m).expect("builtin") / 5.0);
    f.push(builtin_property("qed_proxy", m).expect("builtin"));
    f.push(episode.last_reward().clamp(-2.0, 2.0) / 2.0);
    f.push(episode.current().similarity_to_lead - episode.cfg().similarity_threshold);
    f.push(episode.current().similarity_to_lead);
    let bucket = episode.turn().min(TURN_ONEHOT - 1);
    for i in 0..TURN_ONEHOT {
        f.push(if i == bucket { 1.0 } else { 0.0 });
    }
    debug_assert_eq!(f.len(), FEATURE_LEN);
    f
}

/// Linear-softmax policy parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub num_actions: usize,
    pub num_features: usize,
    /// Preference-score scale for the log-ratio against the reference.
    pub beta: f64,
    /// Sampling temperature.
    pub tau: f64,
    /// Row-major weight matrix, `num_actions x num_features`.
    pub theta: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(num_actions: usize, num_features: usize) -> Self {
        PolicyParams {
            num_actions,
            num_features,
            beta: 0.1,
            tau: 0.9,
            theta: vec![0.0; num_actions * num_features],
        }
    }

    pub fn for_library(library: &FragmentLibrary) -> Self {
        Self::zeros(library.vocab_size(), FEATURE_LEN)
    }

    pub fn row(&self, action: usize) -> &[f64] {
        &self.theta[action * self.num_features..(action + 1) * self.num_features]
    }
}

/// Frozen copy of the parameters used as the preference-learning reference.
/// Never updated during training.
pub fn snapshot_reference(params: &PolicyParams) -> PolicyParams {
    params.clone()
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    params: PolicyParams,
}

pub fn save_checkpoint(params: &PolicyParams, path: &Path) -> Result<(), PolicyError> {
    let blob = serde_json::to_string_pretty(&Checkpoint {
        version: CHECKPOINT_VERSION,
        params: params.clone(),
    })
    .expect("serializable checkpoint");
    std::fs::write(path, blob).map_err(|e| PolicyError::Checkpoint(e.to_string()))
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyParams, PolicyError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
    let ckpt: Checkpoint =
        serde_json::from_str(&text).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(PolicyError::Checkpoint(format!(
            "unsupported checkpoint version {}",
            ckpt.version
        )));
    }
    let p = &ckpt.params;
    if p.theta.len() != p.num_actions * p.num_features || p.tau <= 0.0 {
        return Err(PolicyError::Checkpoint("bad shape header".to_string()));
    }
    if p.theta.iter().any(|v| !v.is_finite()) {
        return Err(PolicyError::Checkpoint("non-finite weights".to_string()));
    }
    Ok(ckpt.params)
}

/// Logits for candidate action rows at an optional temperature override.
pub fn action_logits_at(
    params: &PolicyParams,
    features: &[f64],
    rows: &[usize],
    tau: f64,
) -> Vec<f64> {
    rows.iter()
        .map(|&r| {
            let row = params.row(r);
            let dot: f64 = row.iter().zip(features).map(|(w, x)| w * x).sum();
            dot / tau
        })
        .collect()
}

pub fn action_logits(params: &PolicyParams, features: &[f64], rows: &[usize]) -> Vec<f64> {
    action_logits_at(params, features, rows, params.tau)
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|l| l - log_z).collect()
}

/// Categorical sample over candidate rows; returns (candidate index,
/// exact log-probability).
pub fn sample_action(
    params: &PolicyParams,
    features: &[f64],
    rows: &[usize],
    tau: f64,
    rng: &mut ChaCha8Rng,
) -> (usize, f64) {
    assert!(!rows.is_empty(), "candidate set must be non-empty");
    let logp = log_softmax(&action_logits_at(params, features, rows, tau));
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, lp) in logp.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return (i, *lp);
        }
    }
    (rows.len() - 1, *logp.last().unwrap())
}

/// Gradient of `log pi(chosen | features)` with respect to theta, flattened
/// row-major like `PolicyParams::theta`. Candidates sharing a vocabulary
/// row accumulate into it.
pub fn grad_logprob(
    params: &PolicyParams,
    features: &[f64],
    rows: &[usize],
    chosen: usize,
    tau: f64,
) -> Vec<f64> {
    let logp = log_softmax(&action_logits_at(params, features, rows, tau));
    let mut grad = vec![0.0; params.theta.len()];
    for (i, (&row, lp)) in rows.iter().zip(&logp).enumerate() {
        let indicator = if i == chosen { 1.0 } else { 0.0 };
        let coeff = (indicator - lp.exp()) / tau;
        let base = row * params.num_features;
        for (k, &x) in features.iter().enumerate() {
            grad[base + k] += coeff * x;
        }
    }
    grad
}

/// Log-probability of a given candidate under the parameters.
pub fn logprob_of(
    params: &PolicyParams,
    features: &[f64],
    rows: &[usize],
    chosen: usize,
    tau: f64,
) -> f64 {
    log_softmax(&action_logits_at(params, features, rows, tau))[chosen]
}

/// Everything recorded about one sampled action, as needed for both the
/// environment step and the learning update.
#[derive(Debug, Clone)]
pub struct ActionRecord {
    pub text: String,
    pub edit: EditAction,
    pub features: Vec<f64>,
    pub rows: Vec<usize>,
    pub chosen: usize,
    pub logp: f64,
}

/// The built-in reference policy: parameters plus fragment library.
#[derive(Debug, Clone)]
pub struct EditPolicy {
    pub params: PolicyParams,
    pub library: FragmentLibrary,
}

impl EditPolicy {
    pub fn new(library: FragmentLibrary) -> Self {
        let params = PolicyParams::for_library(&library);
        EditPolicy { params, library }
    }

    pub fn with_params(params: PolicyParams, library: FragmentLibrary) -> Result<Self, PolicyError> {
        if params.num_actions != library.vocab_size() || params.num_features != FEATURE_LEN {
            return Err(PolicyError::Checkpoint(
                "checkpoint shape does not match fragment library".to_string(),
            ));
        }
        Ok(EditPolicy { params, library })
    }

    pub fn candidates(&self, m: &MolecularGraph) -> (Vec<EditAction>, Vec<usize>) {
        let edits = enumerate_legal_edits(m, &self.library);
        let rows = edits.iter().map(EditAction::vocab_row).collect();
        (edits, rows)
    }

    /// Sample an action for the episode's current state and render it as
    /// protocol text. `temperature` overrides the stored sampling tau.
    pub fn act(
        &self,
        episode: &Episode,
        temperature: Option<f64>,
        rng: &mut ChaCha8Rng,
    ) -> ActionRecord {
        let tau = temperature.unwrap_or(self.params.tau);
        let (edits, rows) = self.candidates(&episode.current().graph);
        let features = featurize(episode);
        let (chosen, logp) = sample_action(&self.params, &features, &rows, tau, rng);
        let edit = edits[chosen];
        let text = self.render(&episode.current().graph, &edit);
        ActionRecord {
            text,
            edit,
            features,
            rows,
            chosen,
            logp,
        }
    }

    /// Render an edit as `<think>...</think><answer>SMILES</answer>` text;
    /// an inapplicable edit renders an empty answer, which the environment
    /// scores as an invalid proposal.
    pub fn render(&self, m: &MolecularGraph, edit: &EditAction) -> String {
        match edit {
            EditAction::Done => {
                format!("<think>{}</think>{}", edit.describe(&self.library), crate::env::DONE_SENTINEL)
            }
            _ => match apply_edit(m, edit, &self.library) {
                Ok(next) => format!(
                    "<think>{}</think><answer>{}</answer>",
                    edit.describe(&self.library),
                    next.canonical_smiles()
                ),
                Err(_) => format!(
                    "<think>{}</think><answer></answer>",
                    edit.describe(&self.library)
                ),
            },
        }
    }
}

/// Inference-only adapter: state text in, action text out. Lets an external
/// generator stand in for the built-in policy; gradient operations are
/// bypassed entirely.
pub trait TextPolicy {
    fn respond(&mut self, observation: &str) -> String;
}

/// The built-in policy exposed through the text interface. Reads the
/// current molecule from the observation's `Current molecule:` line.
pub struct EditPolicyText {
    pub policy: EditPolicy,
    pub rng: ChaCha8Rng,
}

impl TextPolicy for EditPolicyText {
    fn respond(&mut self, observation: &str) -> String {
        let Some(line) = observation
            .lines()
            .find_map(|l| l.strip_prefix("Current molecule: "))
        else {
            return crate::env::DONE_SENTINEL.to_string();
        };
        let Ok(m) = crate::chemgraph::parse_smiles(line.trim()) else {
            return crate::env::DONE_SENTINEL.to_string();
        };
        let (edits, rows) = self.policy.candidates(&m);
        let features = vec![1.0; self.policy.params.num_features];
        let (chosen, _) = sample_action(
            &self.policy.params,
            &features,
            &rows,
            self.policy.params.tau,
            &mut self.rng,
        );
        self.policy.render(&m, &edits[chosen])
    }
}

#[cfg(test)]
mod tests;

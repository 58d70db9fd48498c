//! Rejection-sampling repair of networks with missing weights.
//!
//! A damaged network keeps its existing weights and has zeros at the masked
//! positions. Candidates are sampled from the generator, ranked by a
//! criterion, and the best `top_k` are tried in order: each candidate's
//! values are written into the masked positions only, and the patched network
//! is accepted when its survival time is within `tolerance` of the original,
//! undamaged network's survival time.

use serde::{Deserialize, Serialize};

use crate::agent::{survival_of_weights, WeightVector, WEIGHT_DIM};
use crate::error::{Error, Result};
use crate::gen::{sample_networks, GenModel, SampleMode};
use crate::par;
use crate::rng::Rng;
use crate::zoo::{Group, Zoo};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DamagedNet {
    pub weights: WeightVector,
    pub missing_mask: Vec<bool>,
    pub original_survival: f64,
    /// Episode seed used to measure `original_survival`; candidates replay it.
    pub eval_seed: u64,
    pub eval_episodes: usize,
}

impl DamagedNet {
    /// Marks arbitrary positions (missing or known-corrupt) and zeroes them.
    pub fn with_mask(
        original: &[f64],
        mask: Vec<bool>,
        original_survival: f64,
        eval_seed: u64,
        eval_episodes: usize,
    ) -> Result<Self> {
        if original.len() != WEIGHT_DIM || mask.len() != WEIGHT_DIM {
            return Err(Error::contract(format!(
                "weights and mask must both have {WEIGHT_DIM} entries"
            )));
        }
        let weights = original
            .iter()
            .zip(&mask)
            .map(|(&w, &m)| if m { 0.0 } else { w })
            .collect();
        Ok(Self {
            weights: WeightVector::new(weights)?,
            missing_mask: mask,
            original_survival,
            eval_seed,
            eval_episodes,
        })
    }

    pub fn missing_count(&self) -> usize {
        self.missing_mask.iter().filter(|&&m| m).count()
    }

    /// The damaged weights with masked positions taken from `candidate`.
    pub fn patch(&self, candidate: &[f64]) -> WeightVector {
        let v = self
            .weights
            .iter()
            .zip(candidate)
            .zip(&self.missing_mask)
            .map(|((&w, &c), &m)| if m { c } else { w })
            .collect();
        WeightVector::new(v).expect("length preserved")
    }
}

/// Zeroes `round(fraction · 212)` positions chosen uniformly without
/// replacement and records the original network's survival time.
pub fn degrade(w: &[f64], fraction: f64, eval_episodes: usize, rng: &mut Rng) -> Result<DamagedNet> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::contract(format!("degradation fraction {fraction} outside [0, 1]")));
    }
    if w.len() != WEIGHT_DIM {
        return Err(Error::contract(format!("expected {WEIGHT_DIM} weights, got {}", w.len())));
    }
    let count = (fraction * WEIGHT_DIM as f64).round() as usize;
    let mut mask = vec![false; WEIGHT_DIM];
    for i in rng.sample_distinct(WEIGHT_DIM, count) {
        mask[i] = true;
    }
    let eval_seed = rng.next_u64();
    let original_survival = survival_of_weights(w, eval_episodes, &mut Rng::new(eval_seed))?;
    DamagedNet::with_mask(w, mask, original_survival, eval_seed, eval_episodes)
}

/// Squared distance over existing (unmasked) positions only.
pub fn missing_criterion(d: &DamagedNet, c: &[f64]) -> f64 {
    d.weights
        .iter()
        .zip(c)
        .zip(&d.missing_mask)
        .filter(|(_, &m)| !m)
        .map(|((w, c), _)| (w - c) * (w - c))
        .sum()
}

/// Squared distance over every position; masked positions of `d` are zero.
pub fn whole_criterion(d: &DamagedNet, c: &[f64]) -> f64 {
    d.weights.iter().zip(c).map(|(w, c)| (w - c) * (w - c)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Missing,
    Whole,
}

impl Criterion {
    pub fn score(self, d: &DamagedNet, c: &[f64]) -> f64 {
        match self {
            Criterion::Missing => missing_criterion(d, c),
            Criterion::Whole => whole_criterion(d, c),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Criterion::Missing => "missing",
            Criterion::Whole => "whole",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RepairConfig {
    /// Networks drawn from the generator.
    pub sample_budget: usize,
    /// Best-ranked candidates that get evaluated.
    pub top_k: usize,
    /// Maximum survival-time error accepted as success.
    pub tolerance: f64,
    pub criterion: Criterion,
    pub sample_mode: SampleMode,
    pub label: Option<Group>,
    /// Episodes per survival measurement when a sweep degrades networks.
    pub eval_episodes: usize,
}

impl Default for RepairConfig {
    fn default() -> Self {
        Self {
            sample_budget: 200,
            top_k: 10,
            tolerance: 5.0,
            criterion: Criterion::Whole,
            sample_mode: SampleMode::Posterior,
            label: None,
            eval_episodes: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairOutcome {
    pub success: bool,
    /// The accepted candidate as sampled (success only).
    pub candidate: Option<WeightVector>,
    /// The damaged network patched with the accepted candidate (success only).
    pub patched: Option<WeightVector>,
    /// Survival of the accepted patch, or of the closest one tried on failure.
    pub repaired_survival: Option<f64>,
    /// `|repaired − original|`; infinite when nothing was evaluated.
    pub st_error: f64,
    pub samples_used: usize,
    pub evaluations: usize,
}

pub fn repair(d: &DamagedNet, model: &GenModel, source: Option<&Zoo>, config: &RepairConfig, rng: &mut Rng) -> Result<RepairOutcome> {
    let samples = sample_networks(model, config.sample_budget, config.sample_mode, source, config.label, rng)?;
    let mut ranked: Vec<(f64, usize)> = samples
        .iter()
        .enumerate()
        .map(|(i, c)| (config.criterion.score(d, c), i))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    ranked.truncate(config.top_k);

    let mut best: Option<(f64, f64)> = None;
    let mut evaluations = 0;
    for &(_, i) in &ranked {
        let patched = d.patch(&samples[i]);
        let st = survival_of_weights(&patched, d.eval_episodes, &mut Rng::new(d.eval_seed))?;
        evaluations += 1;
        let err = (st - d.original_survival).abs();
        if err < config.tolerance {
            return Ok(RepairOutcome {
                success: true,
                candidate: Some(samples[i].clone()),
                patched: Some(patched),
                repaired_survival: Some(st),
                st_error: err,
                samples_used: samples.len(),
                evaluations,
            });
        }
        if best.map_or(true, |(e, _)| err < e) {
            best = Some((err, st));
        }
    }
    Ok(RepairOutcome {
        success: false,
        candidate: None,
        patched: None,
        repaired_survival: best.map(|b| b.1),
        st_error: best.map_or(f64::INFINITY, |b| b.0),
        samples_used: samples.len(),
        evaluations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairRow {
    pub degradation_fraction: f64,
    pub criterion: Criterion,
    pub trial: usize,
    pub success: bool,
    pub st_error: f64,
    pub samples_used: usize,
    pub original_survival: f64,
    pub repaired_survival: Option<f64>,
}

/// Ten levels 0.1, 0.2, …, 1.0.
pub fn default_fractions() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

/// Degrades `w` once per (fraction, trial) and repairs that same damage with
/// each criterion from the same candidate pool.
#[allow(clippy::too_many_arguments)]
pub fn repair_sweep(
    w: &[f64],
    model: &GenModel,
    source: Option<&Zoo>,
    fractions: &[f64],
    criteria: &[Criterion],
    trials: usize,
    config: &RepairConfig,
    rng: &mut Rng,
) -> Result<Vec<RepairRow>> {
    let jobs: Vec<(usize, f64, usize)> = fractions
        .iter()
        .enumerate()
        .flat_map(|(fi, &f)| (0..trials).map(move |t| (fi, f, t)))
        .collect();
    let base = rng.next_u64();
    let per_job = par::map_slice(&jobs, |&(fi, fraction, trial)| -> Result<Vec<RepairRow>> {
        let mut job_rng = Rng::new(base).fork((fi * trials + trial) as u64);
        let damaged = degrade(w, fraction, config.eval_episodes, &mut job_rng)?;
        let sample_rng = job_rng.fork_labeled("candidates");
        criteria
            .iter()
            .map(|&criterion| {
                let cfg = RepairConfig {
                    criterion,
                    ..config.clone()
                };
                let out = repair(&damaged, model, source, &cfg, &mut sample_rng.clone())?;
                Ok(RepairRow {
                    degradation_fraction: fraction,
                    criterion,
                    trial,
                    success: out.success,
                    st_error: out.st_error,
                    samples_used: out.samples_used,
                    original_survival: damaged.original_survival,
                    repaired_survival: out.repaired_survival,
                })
            })
            .collect()
    });
    let mut rows = Vec::with_capacity(jobs.len() * criteria.len());
    for r in per_job {
        rows.extend(r?);
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[RepairRow]) -> String {
    let mut s = String::from("degradation_fraction,criterion,success,st_error,samples_used,trial\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.degradation_fraction,
            r.criterion.name(),
            r.success,
            r.st_error,
            r.samples_used,
            r.trial
        ));
    }
    s
}

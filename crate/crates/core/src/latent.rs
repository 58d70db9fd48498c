//! Interpolation and extrapolation between agents, in latent space and in
//! raw weight space.

use serde::{Deserialize, Serialize};

use crate::agent::{survival_of_weights, WeightVector};
use crate::error::{Error, Result};
use crate::gen::{GenModel, LatentCode};
use crate::par;
use crate::rng::Rng;
use crate::zoo::Group;

/// Encoder mean of `w`.
pub fn embed(model: &GenModel, w: &[f64], label: Option<Group>) -> Result<LatentCode> {
    let (mu, _) = model.encode(w, label)?;
    LatentCode::new(mu, label)
}

/// `(1 − alpha)·a + alpha·b`. Exact at `alpha = 0` and `alpha = 1`.
pub fn lerp(a: &[f64], b: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::contract(format!(
            "cannot interpolate vectors of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(if alpha == 0.0 {
        a.to_vec()
    } else if alpha == 1.0 {
        b.to_vec()
    } else {
        a.iter().zip(b).map(|(x, y)| (1.0 - alpha) * x + alpha * y).collect()
    })
}

/// `n` evenly spaced values from 0 to `max` inclusive.
pub fn linspace(max: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.0],
        _ => (0..n).map(|i| max * i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
    pub eval_episodes: usize,
    /// Condition used for both embeddings and decoding (conditional models only).
    pub label: Option<Group>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            alphas: linspace(1.5, 20),
            eval_episodes: 100,
            label: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub alpha: f64,
    pub survival_latent: f64,
    pub survival_weight: f64,
    /// Straight line through the two decoded endpoints' survivals, clamped to [1, 200].
    pub baseline_line: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub records: Vec<SweepRecord>,
    /// Survival of `decode(embed(wA))` and `decode(embed(wB))`.
    pub endpoint_a: f64,
    pub endpoint_b: f64,
    pub eval_seed: u64,
    pub eval_episodes: usize,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("alpha,survival_latent,survival_weight,baseline_line\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{},{}\n",
                r.alpha, r.survival_latent, r.survival_weight, r.baseline_line
            ));
        }
        s
    }
}

/// Survival along `lerp(embed(wA), embed(wB), α)` decoded, and along
/// `lerp(wA, wB, α)` directly. Every evaluation replays the same episode
/// seed, so differences between points come from the networks alone.
pub fn sweep(model: &GenModel, wa: &WeightVector, wb: &WeightVector, config: &SweepConfig, rng: &mut Rng) -> Result<SweepResult> {
    if config.eval_episodes == 0 {
        return Err(Error::contract("eval_episodes must be at least 1"));
    }
    let za = embed(model, wa, config.label)?;
    let zb = embed(model, wb, config.label)?;
    let eval_seed = rng.next_u64();
    let eval = |w: &[f64]| survival_of_weights(w, config.eval_episodes, &mut Rng::new(eval_seed));

    let endpoint_a = eval(&model.decode(&za)?)?;
    let endpoint_b = eval(&model.decode(&zb)?)?;
    let records = par::map_slice(&config.alphas, |&alpha| -> Result<SweepRecord> {
        let z = lerp(&za.z, &zb.z, alpha)?;
        let latent_w = model.decode_z(&z, config.label)?;
        let weight_w = lerp(wa, wb, alpha)?;
        Ok(SweepRecord {
            alpha,
            survival_latent: eval(&latent_w)?,
            survival_weight: eval(&weight_w)?,
            baseline_line: (endpoint_a + alpha * (endpoint_b - endpoint_a)).clamp(1.0, 200.0),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        records,
        endpoint_a,
        endpoint_b,
        eval_seed,
        eval_episodes: config.eval_episodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::GenArch;

    #[test]
    fn lerp_examples() {
        let a = [1.0, -2.0, 3.5];
        let b = [0.1, 0.2, 0.3];
        assert_eq!(lerp(&a, &b, 0.0).unwrap(), a.to_vec());
        assert_eq!(lerp(&a, &b, 1.0).unwrap(), b.to_vec());
        assert_eq!(lerp(&[0.0, 0.0], &[2.0, 4.0], 0.5).unwrap(), vec![1.0, 2.0]);
        assert_eq!(lerp(&[0.0], &[1.0], 1.5).unwrap(), vec![1.5]);
        assert!(lerp(&[0.0], &[1.0, 2.0], 0.5).is_err());
    }

    #[test]
    fn alpha_grid() {
        let a = linspace(1.5, 20);
        assert_eq!(a.len(), 20);
        assert_eq!(a[0], 0.0);
        assert_eq!(a[19], 1.5);
    }

    #[test]
    fn embedding_is_deterministic() {
        let model = GenModel::new(GenArch::unconditional(), &mut Rng::new(1));
        let w = vec![0.2; 212];
        let e1 = embed(&model, &w, None).unwrap();
        assert_eq!(e1.z.len(), 32);
        assert_eq!(e1, embed(&model, &w, None).unwrap());
    }

    #[test]
    fn degenerate_sweep() {
        let model = GenModel::new(GenArch::unconditional(), &mut Rng::new(1));
        let w = WeightVector::new((0..212).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.1).collect()).unwrap();
        let cfg = SweepConfig {
            alphas: vec![0.0, 0.3, 0.7, 1.0, 1.4],
            eval_episodes: 10,
            label: None,
        };
        let out = sweep(&model, &w, &w, &cfg, &mut Rng::new(2)).unwrap();
        let first = out.records[0];
        assert_eq!(first.survival_latent, out.endpoint_a);
        for r in &out.records {
            assert_eq!(r.survival_weight, first.survival_weight);
            assert_eq!(r.survival_latent, first.survival_latent);
            assert!((1.0..=200.0).contains(&r.survival_latent));
        }
        let csv = out.to_csv();
        assert!(csv.starts_with("alpha,survival_latent,survival_weight,baseline_line\n"));
        assert_eq!(csv.lines().count(), 6);
    }
}

//! Convergent-learning analysis between pairs of CartPoleNets.
//!
//! Activations are measured on a shared reference set of Cart-Pole states and
//! compared through Pearson correlations of their absolute values. Units are
//! then paired two ways: a greedy one-to-one (bipartite) matching and a
//! per-unit argmax (semi) matching. The convergence distance sums, over the
//! first network's units, how much correlation the one-to-one constraint
//! gives up: `Σ_i ρ[i, semi(i)] − ρ[i, bipartite(i)]`, which is never
//! negative.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::agent::{survival_many, CartPoleNet, WeightVector, HIDDEN_DIM, NUM_ACTIONS};
use crate::cartpole::{Action, CartPole, CartState};
use crate::error::{Error, Result};
use crate::gen::{sample_networks, GenModel, SampleMode};
use crate::par;
use crate::rng::Rng;
use crate::zoo::{Group, Zoo};

/// Standard deviations below this are treated as zero.
pub const ZERO_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Hidden,
    Output,
}

impl Layer {
    pub fn units(self) -> usize {
        match self {
            Layer::Hidden => HIDDEN_DIM,
            Layer::Output => NUM_ACTIONS,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Layer::Hidden => "hidden",
            Layer::Output => "output",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RefProvenance {
    pub seed: u64,
    pub random_episodes: usize,
    pub agent_episodes: usize,
    /// Zoo ids whose greedy policies contributed states.
    pub agent_ids: Vec<u64>,
    /// Set when the zoo was empty and only the random policy was used.
    pub random_only: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet {
    pub states: Vec<CartState>,
    pub provenance: RefProvenance,
}

impl ReferenceSet {
    pub fn from_states(states: Vec<CartState>) -> Self {
        Self {
            states,
            provenance: RefProvenance::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Rolls out a mix of the uniform-random policy (half of the episodes) and
/// greedy policies of zoo agents drawn round-robin over the non-empty
/// groups, recording every visited non-terminal state until `n` are held.
pub fn collect_reference_states(zoo: &Zoo, n: usize, rng: &mut Rng) -> Result<ReferenceSet> {
    if n == 0 {
        return Err(Error::contract("reference set size must be at least 1"));
    }
    let env = CartPole::default();
    let groups: Vec<Vec<usize>> = Group::ALL
        .iter()
        .map(|&g| {
            zoo.records
                .iter()
                .enumerate()
                .filter(|(_, r)| r.group == g)
                .map(|(i, _)| i)
                .collect::<Vec<_>>()
        })
        .filter(|v| !v.is_empty())
        .collect();
    let mut provenance = RefProvenance {
        seed: rng.seed(),
        random_only: zoo.is_empty(),
        ..Default::default()
    };
    let mut states = Vec::with_capacity(n);
    let mut next_group = 0;
    while states.len() < n {
        let use_agent = !groups.is_empty() && rng.bernoulli(0.5);
        let mut policy_rng = rng.fork(states.len() as u64);
        let episode = if use_agent {
            let pool = &groups[next_group % groups.len()];
            next_group += 1;
            let record = &zoo.records[pool[rng.below(pool.len())]];
            provenance.agent_episodes += 1;
            provenance.agent_ids.push(record.id);
            let net = CartPoleNet::devectorize(&record.weights)?;
            env.rollout(|s| net.greedy_action(s), rng, env.config.max_steps, true)
        } else {
            provenance.random_episodes += 1;
            env.rollout(
                |_| Action::from_index(policy_rng.below(NUM_ACTIONS)),
                rng,
                env.config.max_steps,
                true,
            )
        };
        for step in episode.trajectory.unwrap_or_default() {
            if states.len() == n {
                break;
            }
            states.push(CartState::new(step.x, step.x_dot, step.theta, step.theta_dot));
        }
    }
    Ok(ReferenceSet { states, provenance })
}

/// `|activation|` of every unit over the reference set, one row per unit.
pub fn abs_activations(net: &CartPoleNet, refs: &ReferenceSet, layer: Layer) -> Vec<Vec<f64>> {
    let mut rows = vec![Vec::with_capacity(refs.len()); layer.units()];
    for s in &refs.states {
        match layer {
            Layer::Hidden => {
                for (row, a) in rows.iter_mut().zip(net.hidden_activations(s)) {
                    row.push(a.abs());
                }
            }
            Layer::Output => {
                for (row, a) in rows.iter_mut().zip(net.qvalues(s)) {
                    row.push(a.abs());
                }
            }
        }
    }
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UnitStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

/// Streaming (Welford) mean and population std of `|activation|` per unit.
pub fn activation_stats(net: &CartPoleNet, refs: &ReferenceSet, layer: Layer) -> Result<Vec<UnitStats>> {
    if refs.is_empty() {
        return Err(Error::contract("reference set is empty"));
    }
    let units = layer.units();
    let mut mean = vec![0.0; units];
    let mut m2 = vec![0.0; units];
    let mut buf = [0.0; HIDDEN_DIM];
    for (k, s) in refs.states.iter().enumerate() {
        match layer {
            Layer::Hidden => buf = net.hidden_activations(s),
            Layer::Output => buf[..NUM_ACTIONS].copy_from_slice(&net.qvalues(s)),
        }
        let count = (k + 1) as f64;
        for u in 0..units {
            let x = buf[u].abs();
            let delta = x - mean[u];
            mean[u] += delta / count;
            m2[u] += delta * (x - mean[u]);
        }
    }
    let n = refs.len() as f64;
    Ok(mean
        .into_iter()
        .zip(m2)
        .map(|(mean, m2)| UnitStats {
            mean,
            std: (m2 / n).max(0.0).sqrt(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub layer: Layer,
    /// `rho[i][j]` correlates unit `i` of the first net with unit `j` of the second.
    pub rho: Vec<Vec<f64>>,
    pub stats_a: Vec<UnitStats>,
    pub stats_b: Vec<UnitStats>,
}

impl CorrelationMatrix {
    pub fn transpose(&self) -> CorrelationMatrix {
        let rows = self.rho.len();
        let cols = self.rho.first().map_or(0, Vec::len);
        CorrelationMatrix {
            layer: self.layer,
            rho: (0..cols).map(|j| (0..rows).map(|i| self.rho[i][j]).collect()).collect(),
            stats_a: self.stats_b.clone(),
            stats_b: self.stats_a.clone(),
        }
    }

    /// CSV grid, one row per unit of the first network.
    pub fn to_csv(&self) -> String {
        let cols = self.rho.first().map_or(0, Vec::len);
        let mut s = String::from("unit");
        for j in 0..cols {
            s.push_str(&format!(",b{j}"));
        }
        s.push('\n');
        for (i, row) in self.rho.iter().enumerate() {
            s.push_str(&format!("a{i}"));
            for v in row {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

fn moments(rows: &[Vec<f64>]) -> Vec<UnitStats> {
    rows.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            UnitStats { mean, std: var.sqrt() }
        })
        .collect()
}

/// Pearson correlation between absolute activations. Pairs involving a unit
/// with zero variance get correlation 0.
pub fn correlation_matrix(a: &CartPoleNet, b: &CartPoleNet, refs: &ReferenceSet, layer: Layer) -> Result<CorrelationMatrix> {
    if refs.is_empty() {
        return Err(Error::contract("reference set is empty"));
    }
    let xa = abs_activations(a, refs, layer);
    let xb = abs_activations(b, refs, layer);
    Ok(correlation_from_activations(&xa, &xb, layer))
}

pub fn correlation_from_activations(xa: &[Vec<f64>], xb: &[Vec<f64>], layer: Layer) -> CorrelationMatrix {
    let stats_a = moments(xa);
    let stats_b = moments(xb);
    let centered_b: Vec<Vec<f64>> = xb
        .iter()
        .zip(&stats_b)
        .map(|(row, s)| row.iter().map(|x| x - s.mean).collect())
        .collect();
    let n = xa.first().map_or(1, Vec::len) as f64;
    let rho = par::map_range(xa.len(), |i| {
        let sa = stats_a[i];
        let ca: Vec<f64> = xa[i].iter().map(|x| x - sa.mean).collect();
        centered_b
            .iter()
            .zip(&stats_b)
            .map(|(cb, sb)| {
                if sa.std < ZERO_VARIANCE || sb.std < ZERO_VARIANCE {
                    return 0.0;
                }
                let cov = ca.iter().zip(cb).map(|(p, q)| p * q).sum::<f64>() / n;
                (cov / (sa.std * sb.std)).clamp(-1.0, 1.0)
            })
            .collect()
    });
    CorrelationMatrix {
        layer,
        rho,
        stats_a,
        stats_b,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchingKind {
    Bipartite,
    Semi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    /// `(i, j, rho[i][j])`.
    pub pairs: Vec<(usize, usize, f64)>,
    pub kind: MatchingKind,
}

impl Matching {
    /// Partner of unit `i` of the first network, if matched.
    pub fn partner(&self, i: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == i).map(|p| p.1)
    }
}

/// Repeatedly takes the globally largest remaining correlation and removes
/// its row and column. Ties go to the lexicographically smallest `(i, j)`.
/// Pairs are returned in selection order (descending correlation).
pub fn greedy_bipartite(rho: &[Vec<f64>]) -> Matching {
    let rows = rho.len();
    let cols = rho.first().map_or(0, Vec::len);
    let mut cells: Vec<(usize, usize, f64)> = (0..rows)
        .flat_map(|i| (0..cols).map(move |j| (i, j, rho[i][j])))
        .collect();
    cells.sort_by(|x, y| {
        y.2.partial_cmp(&x.2)
            .unwrap_or(Ordering::Equal)
            .then(x.0.cmp(&y.0))
            .then(x.1.cmp(&y.1))
    });
    let mut row_used = vec![false; rows];
    let mut col_used = vec![false; cols];
    let mut pairs = Vec::with_capacity(rows.min(cols));
    for (i, j, r) in cells {
        if row_used[i] || col_used[j] {
            continue;
        }
        row_used[i] = true;
        col_used[j] = true;
        pairs.push((i, j, r));
        if pairs.len() == rows.min(cols) {
            break;
        }
    }
    Matching {
        pairs,
        kind: MatchingKind::Bipartite,
    }
}

fn row_argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Every unit `i` goes to `argmax_j rho[i][j]` (smallest `j` on ties), in row order.
pub fn semi_matching(rho: &[Vec<f64>]) -> Matching {
    Matching {
        pairs: rho
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let j = row_argmax(row);
                (i, j, row[j])
            })
            .collect(),
        kind: MatchingKind::Semi,
    }
}

/// Semi-matching processed in the bipartite matching's descending-correlation
/// order, followed by any rows the bipartite matching left out. Assignments are
/// identical to [`semi_matching`]; only the pair order differs.
pub fn canonical_semi_matching(rho: &[Vec<f64>], bipartite: &Matching) -> Matching {
    let mut order: Vec<usize> = bipartite.pairs.iter().map(|p| p.0).collect();
    for i in 0..rho.len() {
        if !order.contains(&i) {
            order.push(i);
        }
    }
    Matching {
        pairs: order
            .into_iter()
            .map(|i| {
                let j = row_argmax(&rho[i]);
                (i, j, rho[i][j])
            })
            .collect(),
        kind: MatchingKind::Semi,
    }
}

/// `Σ_i rho[i, semi(i)] − rho[i, bipartite(i)]` over rows the bipartite
/// matching covers.
pub fn convergence_distance_from_rho(rho: &[Vec<f64>]) -> f64 {
    let bip = greedy_bipartite(rho);
    bip.pairs
        .iter()
        .map(|&(i, _, r_bip)| rho[i][row_argmax(&rho[i])] - r_bip)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdReport {
    /// From the first network's units.
    pub forward: f64,
    /// From the second network's units.
    pub backward: f64,
    pub mean: f64,
}

pub fn cd_report(corr: &CorrelationMatrix) -> CdReport {
    let forward = convergence_distance_from_rho(&corr.rho);
    let backward = convergence_distance_from_rho(&corr.transpose().rho);
    CdReport {
        forward,
        backward,
        mean: 0.5 * (forward + backward),
    }
}

pub fn convergence_distance(a: &CartPoleNet, b: &CartPoleNet, refs: &ReferenceSet, layer: Layer) -> Result<CdReport> {
    Ok(cd_report(&correlation_matrix(a, b, refs, layer)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCd {
    pub a: u64,
    pub b: u64,
    pub layer: Layer,
    pub cd: CdReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdSummary {
    pub layer: Layer,
    pub pairs: usize,
    /// Of the per-pair symmetrized CD.
    pub mean: f64,
    pub std: f64,
}

/// CDs for every unordered pair of `nets` (labelled by `ids`) on both layers.
pub fn all_pairs(ids: &[u64], nets: &[CartPoleNet], refs: &ReferenceSet) -> Result<Vec<PairCd>> {
    if ids.len() != nets.len() {
        return Err(Error::contract("need one id per network"));
    }
    let acts: Vec<[Vec<Vec<f64>>; 2]> = par::map_slice(nets, |n| {
        [abs_activations(n, refs, Layer::Hidden), abs_activations(n, refs, Layer::Output)]
    });
    let mut jobs = Vec::new();
    for i in 0..nets.len() {
        for j in i + 1..nets.len() {
            for (li, layer) in [Layer::Hidden, Layer::Output].into_iter().enumerate() {
                jobs.push((i, j, li, layer));
            }
        }
    }
    Ok(par::map_slice(&jobs, |&(i, j, li, layer)| PairCd {
        a: ids[i],
        b: ids[j],
        layer,
        cd: cd_report(&correlation_from_activations(&acts[i][li], &acts[j][li], layer)),
    }))
}

pub fn summarize(pairs: &[PairCd], layer: Layer) -> CdSummary {
    let vals: Vec<f64> = pairs.iter().filter(|p| p.layer == layer).map(|p| p.cd.mean).collect();
    let n = vals.len();
    let mean = if n == 0 { f64::NAN } else { vals.iter().sum::<f64>() / n as f64 };
    let std = if n == 0 {
        f64::NAN
    } else {
        (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt()
    };
    CdSummary { layer, pairs: n, mean, std }
}

/// Draws posterior samples from `model` in batches until `count` of them
/// survive between `lo` and `hi` steps (inclusive) or `max_draws` samples
/// have been tried. Returns the accepted networks with their survival times.
#[allow(clippy::too_many_arguments)]
pub fn draw_with_survival(
    model: &GenModel,
    source: &Zoo,
    label: Option<Group>,
    (lo, hi): (f64, f64),
    count: usize,
    max_draws: usize,
    eval_episodes: usize,
    rng: &mut Rng,
) -> Result<Vec<(WeightVector, f64)>> {
    const BATCH: usize = 64;
    let eval_rng = rng.fork_labeled("eval");
    let mut kept = Vec::with_capacity(count);
    let mut drawn = 0;
    let mut batch = 0;
    while kept.len() < count && drawn < max_draws {
        let n = BATCH.min(max_draws - drawn);
        let samples = sample_networks(model, n, SampleMode::Posterior, Some(source), label, rng)?;
        let sts = survival_many(&samples, eval_episodes, &eval_rng.fork(batch))?;
        for (w, st) in samples.into_iter().zip(sts) {
            if kept.len() < count && (lo..=hi).contains(&st) {
                kept.push((w, st));
            }
        }
        drawn += n;
        batch += 1;
    }
    Ok(kept)
}

//! Correlation and matching checked against naive reference implementations.

use agentgen::convergence::{
    convergence_distance_from_rho, correlation_from_activations, greedy_bipartite, semi_matching, Layer,
};
use agentgen::rng::Rng;

const CASES: usize = 1000;
const N: usize = 6;

/// Plain two-pass Pearson correlation with the zero-variance rule.
fn naive_corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    let sa = (va / n).sqrt();
    let sb = (vb / n).sqrt();
    if sa < 1e-12 || sb < 1e-12 {
        0.0
    } else {
        cov / n / (sa * sb)
    }
}

/// Triple loop: scan every remaining cell for the maximum, first found wins.
fn naive_greedy(rho: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let n = rho.len();
    let m = rho[0].len();
    let mut row_used = vec![false; n];
    let mut col_used = vec![false; m];
    let mut out = Vec::new();
    for _ in 0..n.min(m) {
        let mut best: Option<(usize, usize)> = None;
        for i in 0..n {
            for j in 0..m {
                if row_used[i] || col_used[j] {
                    continue;
                }
                if best.map_or(true, |(bi, bj)| rho[i][j] > rho[bi][bj]) {
                    best = Some((i, j));
                }
            }
        }
        let (i, j) = best.unwrap();
        row_used[i] = true;
        col_used[j] = true;
        out.push((i, j));
    }
    out.sort();
    out
}

fn naive_argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for j in 1..row.len() {
        if row[j] > row[best] {
            best = j;
        }
    }
    best
}

fn random_rho(rng: &mut Rng, coarse: bool) -> Vec<Vec<f64>> {
    (0..N)
        .map(|_| {
            (0..N)
                .map(|_| {
                    if coarse {
                        // Few distinct values so ties are common.
                        rng.below(4) as f64 / 4.0
                    } else {
                        rng.uniform_range(-1.0, 1.0)
                    }
                })
                .collect()
        })
        .collect()
}

#[test]
fn correlation_matches_naive() {
    let mut rng = Rng::new(11);
    for case in 0..CASES {
        let samples = 5 + rng.below(40);
        let mut unit = |dead: bool| -> Vec<f64> {
            (0..samples)
                .map(|_| if dead { 0.7 } else { rng.normal().abs() })
                .collect()
        };
        let xa: Vec<Vec<f64>> = (0..N).map(|i| unit(case % 7 == 0 && i == 2)).collect();
        let xb: Vec<Vec<f64>> = (0..N).map(|j| unit(case % 5 == 0 && j == 4)).collect();
        let corr = correlation_from_activations(&xa, &xb, Layer::Hidden);
        for i in 0..N {
            for j in 0..N {
                let want = naive_corr(&xa[i], &xb[j]);
                let got = corr.rho[i][j];
                assert!((got - want).abs() < 1e-10, "case {case} ({i},{j}): {got} vs {want}");
                assert!((-1.0..=1.0).contains(&got));
            }
        }
    }
}

#[test]
fn greedy_matches_naive() {
    let mut rng = Rng::new(12);
    for case in 0..CASES {
        let rho = random_rho(&mut rng, case % 2 == 0);
        let mut got: Vec<(usize, usize)> = greedy_bipartite(&rho).pairs.iter().map(|p| (p.0, p.1)).collect();
        got.sort();
        assert_eq!(got, naive_greedy(&rho), "case {case}");
    }
}

#[test]
fn semi_matches_naive() {
    let mut rng = Rng::new(13);
    for case in 0..CASES {
        let rho = random_rho(&mut rng, case % 2 == 0);
        let semi = semi_matching(&rho);
        for i in 0..N {
            assert_eq!(semi.partner(i), Some(naive_argmax(&rho[i])), "case {case} row {i}");
        }
    }
}

#[test]
fn distance_matches_naive() {
    let mut rng = Rng::new(14);
    for case in 0..CASES {
        let rho = random_rho(&mut rng, case % 2 == 0);
        let want: f64 = naive_greedy(&rho)
            .iter()
            .map(|&(i, j)| rho[i][naive_argmax(&rho[i])] - rho[i][j])
            .sum();
        let got = convergence_distance_from_rho(&rho);
        assert!((got - want).abs() < 1e-12, "case {case}");
        assert!(got >= 0.0);
    }
}

#![allow(dead_code)]

use lstd_ac::grid::{build_grid_mdp, grid_features, CellLabel, GridSpec};
use lstd_ac::{BoltzmannPolicy, FeatureTable, FiniteMdp, MrpProblem};
use rand::seq::SliceRandom;
use rand::Rng;

/// `x0 → goal` with probability `q`, `x0 → unsafe` otherwise. States: 0 = x0,
/// 1 = goal, 2 = unsafe.
pub fn coin_mrp(q: f64) -> MrpProblem {
    let mut m = FiniteMdp::new(3, 1, 0).unwrap();
    m.set_row(0, 0, &[(1, q), (2, 1.0 - q)], 0.0).unwrap();
    m.set_row(1, 0, &[(1, 1.0)], 0.0).unwrap();
    m.set_row(2, 0, &[(2, 1.0)], 0.0).unwrap();
    MrpProblem::new(m, vec![1], vec![2]).unwrap()
}

/// Two-stage decision problem in which every attempt takes exactly three
/// steps of the restart chain, whichever branch is taken and however it ends.
///
/// States: 0 = x0, 1 = a, 2 = b, 3 = goal, 4 = unsafe. At x0 action 0 leads
/// to a and action 1 to b; at a and b action 0 is the safer choice.
pub fn branch_fixture() -> (MrpProblem, FeatureTable) {
    let mut m = FiniteMdp::new(5, 2, 0).unwrap();
    m.set_row(0, 0, &[(1, 1.0)], 0.0).unwrap();
    m.set_row(0, 1, &[(2, 1.0)], 0.0).unwrap();
    m.set_row(1, 0, &[(3, 0.9), (4, 0.1)], 0.0).unwrap();
    m.set_row(1, 1, &[(3, 0.4), (4, 0.6)], 0.0).unwrap();
    m.set_row(2, 0, &[(3, 0.8), (4, 0.2)], 0.0).unwrap();
    m.set_row(2, 1, &[(3, 0.3), (4, 0.7)], 0.0).unwrap();
    for x in [3, 4] {
        for u in 0..2 {
            m.set_row(x, u, &[(x, 1.0)], 0.0).unwrap();
        }
    }
    let problem = MrpProblem::new(m, vec![3], vec![4]).unwrap();
    let mut f = FeatureTable::new(5, 2, 2);
    f.set(0, 0, &[0.5, 0.0]).unwrap();
    f.set(0, 1, &[0.0, 0.5]).unwrap();
    f.set(1, 0, &[1.0, 0.0]).unwrap();
    f.set(1, 1, &[0.0, 0.0]).unwrap();
    f.set(2, 0, &[0.0, 1.0]).unwrap();
    f.set(2, 1, &[0.0, 0.0]).unwrap();
    for x in [3, 4] {
        for u in 0..2 {
            f.set_zero(x, u).unwrap();
        }
    }
    (problem, f)
}

/// Random MRP: `n_safe` transient states (state 0 is x0), then `n_goal` goal
/// states, then `n_unsafe` unsafe states. Every available row puts positive
/// mass on some goal, so every policy is proper. Features have dimension 2.
pub fn random_mrp<R: Rng>(rng: &mut R, n_safe: usize, n_goal: usize, n_unsafe: usize, n_actions: usize) -> (MrpProblem, FeatureTable) {
    let n = n_safe + n_goal + n_unsafe;
    let mut m = FiniteMdp::new(n, n_actions, 0).unwrap();
    let mut f = FeatureTable::new(n, n_actions, 2);
    let goals: Vec<usize> = (n_safe..n_safe + n_goal).collect();
    let unsafe_states: Vec<usize> = (n_safe + n_goal..n).collect();
    for x in 0..n_safe {
        for u in 0..n_actions {
            if u > 0 && rng.gen_bool(0.25) {
                continue;
            }
            let mut row = vec![(*goals.choose(rng).unwrap(), rng.gen_range(0.05..1.0))];
            for _ in 0..rng.gen_range(1..4) {
                row.push((rng.gen_range(0..n), rng.gen_range(0.0..1.0)));
            }
            let total: f64 = row.iter().map(|(_, p)| p).sum();
            let row: Vec<(usize, f64)> = row.into_iter().map(|(j, p)| (j, p / total)).collect();
            let fixed = fix_row_sum(&row);
            m.set_row(x, u, &fixed, 0.0).unwrap();
            f.set(x, u, &[rng.gen_range(-1.0..1.0), rng.gen_range(-2.0..2.0)]).unwrap();
        }
    }
    for &x in goals.iter().chain(&unsafe_states) {
        for u in 0..n_actions {
            m.set_row(x, u, &[(x, 1.0)], 0.0).unwrap();
            f.set_zero(x, u).unwrap();
        }
    }
    (MrpProblem::new(m, goals, unsafe_states).unwrap(), f)
}

/// Puts the rounding residue of a normalized row onto its largest entry.
fn fix_row_sum(row: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let mut out = row.to_vec();
    let total: f64 = out.iter().map(|(_, p)| p).sum();
    let (imax, _) = out.iter().enumerate().max_by(|a, b| a.1 .1.total_cmp(&b.1 .1)).unwrap();
    out[imax].1 += 1.0 - total;
    out
}

/// Random grid of size at most `max_side`×`max_side` with scattered unsafe
/// cells, S in the bottom-left corner and a goal in the top-right corner.
/// Retries until every safe cell can reach a goal.
pub fn random_grid<R: Rng>(rng: &mut R, max_side: usize) -> (GridSpec, MrpProblem) {
    loop {
        let w = rng.gen_range(3..=max_side);
        let h = rng.gen_range(3..=max_side);
        let mut labels = vec![CellLabel::Free; w * h];
        for l in labels.iter_mut() {
            if rng.gen_bool(0.15) {
                *l = CellLabel::Unsafe;
            }
        }
        labels[(h - 1) * w] = CellLabel::Initial;
        labels[w - 1] = CellLabel::Goal;
        if rng.gen_bool(0.5) {
            labels[0] = CellLabel::Goal;
        }
        let mut spec = GridSpec::from_labels(w, h, labels).unwrap();
        spec.radius = rng.gen_range(1..=2);
        spec = spec.with_random_roughness(rng.gen());
        if let Ok(problem) = build_grid_mdp(&spec) {
            return (spec, problem);
        }
    }
}

/// Boltzmann policy on the grid's own feature table.
pub fn grid_policy(spec: &GridSpec, problem: &MrpProblem) -> BoltzmannPolicy<FeatureTable> {
    BoltzmannPolicy::new(grid_features(spec, problem).unwrap().table)
}

/// Mean and standard error of a sample.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

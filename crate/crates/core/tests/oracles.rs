mod common;

use common::{branch_fixture, grid_policy, mean_se, random_grid, random_mrp};
use lstd_ac::grid::{build_grid_mdp, build_grid_model, load_grid, CellLabel};
use lstd_ac::mdp::{assert_proper_reachable, sample_transition, Rsp};
use lstd_ac::mrp::{apply_restart_modification, mrp_to_ssp, SspProblem};
use lstd_ac::oracles::{
    compare_gradients, expected_total_cost, max_reachability, policy_gradient_fd, policy_table, project_q, psi_tables, q_values,
    rsp_reachability, stationary_distribution, weighted_inner_product,
};
use lstd_ac::{BoltzmannPolicy, FeatureProvider, FeatureTable, MrpProblem, PolicyParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::VecDeque;

const TEN_BY_TEN: &str = "\
.........G
..##......
..##...#..
.......#..
.#........
.#...##...
.....##...
..#.......
..#....#..
S......#.G
";

/// Simulates the MRP from x0 until an absorbing goal or unsafe state.
fn simulate_reach<P: Rsp, R: Rng>(problem: &MrpProblem, policy: &P, theta: &PolicyParams, rng: &mut R) -> bool {
    let mut x = problem.initial_state();
    loop {
        if problem.is_goal(x) {
            return true;
        }
        if problem.is_unsafe(x) {
            return false;
        }
        let u = policy.sample_action(theta, x, rng).unwrap();
        x = sample_transition(&problem.mdp, x, u, rng).unwrap();
    }
}

/// Total SSP cost of one episode that starts with `(x, u)` forced.
fn simulate_q<P: Rsp, R: Rng>(ssp: &SspProblem, policy: &P, theta: &PolicyParams, x: usize, u: usize, rng: &mut R) -> f64 {
    let terminal = ssp.terminal();
    let (mut x, mut u) = (x, u);
    let mut total = 0.0;
    while x != terminal {
        total += ssp.mdp.cost(x, u);
        x = sample_transition(&ssp.mdp, x, u, rng).unwrap();
        if x != terminal {
            u = policy.sample_action(theta, x, rng).unwrap();
        }
    }
    total
}

#[test]
fn reachability_on_ten_by_ten_matches_monte_carlo() {
    let spec = load_grid(TEN_BY_TEN).unwrap().with_random_roughness(3);
    let problem = build_grid_mdp(&spec).unwrap();
    let policy = grid_policy(&spec, &problem);
    let theta = PolicyParams(vec![50.0, -10.0]);
    let exact = rsp_reachability(&problem, &policy, &theta).unwrap().values[problem.initial_state()];
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let n = 1_000_000;
    let hits = (0..n).filter(|_| simulate_reach(&problem, &policy, &theta, &mut rng)).count();
    let p = hits as f64 / n as f64;
    let se = (p * (1.0 - p) / n as f64).sqrt();
    assert!((p - exact).abs() <= 3.0 * se, "simulated {p} ± {se}, exact {exact}");
}

#[test]
fn q_values_match_monte_carlo_returns() {
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    let (problem, features) = random_mrp(&mut rng, 1, 1, 1, 3);
    let ssp = mrp_to_ssp(&problem).unwrap();
    assert_eq!(ssp.mdp.num_states(), 3);
    let policy = BoltzmannPolicy::new(ssp.lift_features(&features).unwrap());
    let theta = PolicyParams(vec![0.7, -0.3]);
    let q = q_values(&ssp, &policy, &theta).unwrap();
    for x in 0..ssp.mdp.num_states() {
        if x == ssp.terminal() {
            continue;
        }
        for u in ssp.mdp.available_actions(x).collect::<Vec<_>>() {
            let returns: Vec<f64> = (0..200_000).map(|_| simulate_q(&ssp, &policy, &theta, x, u, &mut rng)).collect();
            let (m, se) = mean_se(&returns);
            assert!((m - q.get(x, u)).abs() <= 3.0 * se, "Q({x},{u}) = {} vs {m} ± {se}", q.get(x, u));
        }
    }
}

#[test]
fn q_values_average_to_total_cost() {
    let mut rng = ChaCha8Rng::seed_from_u64(79);
    for _ in 0..10 {
        let (problem, features) = random_mrp(&mut rng, 5, 1, 2, 3);
        let ssp = mrp_to_ssp(&problem).unwrap();
        let policy = BoltzmannPolicy::new(ssp.lift_features(&features).unwrap());
        let theta = PolicyParams(vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]);
        let q = q_values(&ssp, &policy, &theta).unwrap();
        let j = expected_total_cost(&ssp, &policy, &theta).unwrap();
        for x in 0..ssp.mdp.num_states() {
            let mu = policy.action_probs(&theta, x).unwrap();
            let avg: f64 = (0..ssp.mdp.num_actions()).map(|u| mu[u] * q.get(x, u)).sum();
            assert!((avg - j.values[x]).abs() <= 1e-8);
        }
        for u in 0..ssp.mdp.num_actions() {
            assert_eq!(q.get(ssp.terminal(), u), 0.0);
        }
    }
}

/// Value of a deterministic stationary policy by fixed-point iteration.
fn deterministic_value(problem: &MrpProblem, choice: &[usize]) -> Vec<f64> {
    let n = problem.mdp.num_states();
    let mut v: Vec<f64> = (0..n).map(|x| if problem.is_goal(x) { 1.0 } else { 0.0 }).collect();
    for _ in 0..200_000 {
        let mut delta: f64 = 0.0;
        for x in 0..n {
            if problem.is_goal(x) || problem.is_unsafe(x) {
                continue;
            }
            let next: f64 = problem.mdp.row(x, choice[x]).iter().map(|&(j, p)| p * v[j]).sum();
            delta = delta.max((next - v[x]).abs());
            v[x] = next;
        }
        if delta < 1e-15 {
            break;
        }
    }
    v
}

#[test]
fn value_iteration_matches_policy_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    for _ in 0..10 {
        let (problem, _) = random_mrp(&mut rng, 4, 1, 1, 3);
        let safe: Vec<usize> = (0..4).collect();
        let options: Vec<Vec<usize>> = safe.iter().map(|&x| problem.mdp.available_actions(x).collect()).collect();
        let mut best = vec![0.0; problem.mdp.num_states()];
        let total: usize = options.iter().map(|o| o.len()).product();
        for code in 0..total {
            let mut rest = code;
            let mut choice = vec![0; problem.mdp.num_states()];
            for (x, o) in options.iter().enumerate() {
                choice[x] = o[rest % o.len()];
                rest /= o.len();
            }
            let v = deterministic_value(&problem, &choice);
            for x in 0..v.len() {
                best[x] = f64::max(best[x], v[x]);
            }
        }
        let vi = max_reachability(&problem, 1e-12).unwrap();
        assert!(vi.converged);
        let greedy_choice: Vec<usize> = vi.policy.iter().map(|u| u.unwrap_or(0)).collect();
        let greedy = deterministic_value(&problem, &greedy_choice);
        for x in safe {
            assert!((vi.values[x] - best[x]).abs() <= 1e-9, "x={x}: {} vs {}", vi.values[x], best[x]);
            assert!((greedy[x] - best[x]).abs() <= 1e-9);
        }
    }
}

#[test]
fn optimal_reachability_dominates_every_rsp() {
    let spec = load_grid(TEN_BY_TEN).unwrap().with_random_roughness(4);
    let problem = build_grid_mdp(&spec).unwrap();
    let policy = grid_policy(&spec, &problem);
    let vi = max_reachability(&problem, 1e-12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    for _ in 0..20 {
        let theta = PolicyParams(vec![rng.gen_range(-60.0..60.0), rng.gen_range(-20.0..20.0)]);
        let r = rsp_reachability(&problem, &policy, &theta).unwrap();
        for x in 0..r.values.len() {
            assert!(r.values[x] <= vi.values[x] + 1e-9);
        }
    }
}

/// Breadth-first search over non-unsafe cells from the initial cell.
fn bfs_reaches_goal(spec: &lstd_ac::grid::GridSpec) -> bool {
    let mut seen = vec![false; spec.num_cells()];
    let start = spec.initial_cell();
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(x) = queue.pop_front() {
        if spec.labels[x] == CellLabel::Goal {
            return true;
        }
        for dir in 0..4 {
            if let Some(y) = spec.neighbor(x, dir) {
                if !seen[y] && spec.labels[y] != CellLabel::Unsafe {
                    seen[y] = true;
                    queue.push_back(y);
                }
            }
        }
    }
    false
}

#[test]
fn separating_wall_breaks_proper_reachability() {
    let mut rows: Vec<String> = (0..10).map(|_| ".".repeat(10)).collect();
    rows[4] = "#".repeat(10);
    rows[0].replace_range(9..10, "G");
    rows[9].replace_range(0..1, "S");
    let spec = load_grid(&(rows.join("\n") + "\n")).unwrap();
    assert!(!bfs_reaches_goal(&spec));
    let mdp = build_grid_model(&spec).unwrap();
    let goals = spec.cells_with(CellLabel::Goal);
    let walls = spec.cells_with(CellLabel::Unsafe);
    assert!(!assert_proper_reachable(&mdp, &goals, &walls));
    assert!(build_grid_mdp(&spec).is_err());

    let mut open = spec.clone();
    let gap = open.index(4, 5);
    open.labels[gap] = CellLabel::Free;
    let walls: Vec<usize> = open.cells_with(CellLabel::Unsafe);
    assert!(bfs_reaches_goal(&open));
    assert!(assert_proper_reachable(&build_grid_model(&open).unwrap(), &goals, &walls));
}

#[test]
fn finite_differences_are_richardson_consistent() {
    let (problem, features) = branch_fixture();
    let ssp = mrp_to_ssp(&problem).unwrap();
    let policy = BoltzmannPolicy::new(ssp.lift_features(&features).unwrap());
    let theta = PolicyParams(vec![0.4, -0.8]);
    let coarse = policy_gradient_fd(&ssp, &policy, &theta, 1e-4).unwrap();
    let fine = policy_gradient_fd(&ssp, &policy, &theta, 1e-5).unwrap();
    for i in 0..2 {
        assert!((coarse[i] - fine[i]).abs() <= 1e-6, "component {i}: {} vs {}", coarse[i], fine[i]);
    }
    assert!(coarse.iter().any(|g| g.abs() > 1e-3));
}

#[test]
fn parameter_without_effect_has_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(83);
    let (problem, features) = random_mrp(&mut rng, 4, 1, 1, 3);
    let mut flat = FeatureTable::new(problem.mdp.num_states(), 3, 2);
    for x in 0..problem.mdp.num_states() {
        for u in 0..3 {
            if features.available(x, u) {
                let phi = features.features(x, u);
                flat.set(x, u, &[0.3, phi[1]]).unwrap();
            }
        }
    }
    let ssp = mrp_to_ssp(&problem).unwrap();
    let policy = BoltzmannPolicy::new(ssp.lift_features(&flat).unwrap());
    let g = policy_gradient_fd(&ssp, &policy, &PolicyParams(vec![1.3, 0.6]), 1e-5).unwrap();
    assert!(g[0].abs() <= 1e-7, "{g:?}");
    assert!(g[1].abs() > 1e-4);
}

fn projection_fixtures() -> Vec<(SspProblem, BoltzmannPolicy<FeatureTable>, PolicyParams)> {
    let mut out = Vec::new();
    let (problem, features) = branch_fixture();
    let ssp = mrp_to_ssp(&problem).unwrap();
    let policy = BoltzmannPolicy::new(ssp.lift_features(&features).unwrap());
    out.push((ssp, policy, PolicyParams(vec![0.3, -0.2])));
    let mut rng = ChaCha8Rng::seed_from_u64(84);
    for _ in 0..4 {
        let (problem, features) = random_mrp(&mut rng, 3, 1, 1, 3);
        let ssp = mrp_to_ssp(&problem).unwrap();
        let policy = BoltzmannPolicy::new(ssp.lift_features(&features).unwrap());
        out.push((ssp, policy, PolicyParams(vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)])));
    }
    for _ in 0..2 {
        let (spec, problem) = random_grid(&mut rng, 6);
        let features = lstd_ac::grid::grid_features(&spec, &problem).unwrap().table;
        let ssp = mrp_to_ssp(&problem).unwrap();
        let policy = BoltzmannPolicy::new(ssp.lift_features(&features).unwrap());
        out.push((ssp, policy, PolicyParams(vec![50.0, -10.0])));
    }
    out
}

#[test]
fn projection_preserves_inner_products_with_scores() {
    for (ssp, policy, theta) in projection_fixtures() {
        let restart = apply_restart_modification(&ssp).unwrap();
        let stat = stationary_distribution(&restart, &policy, &theta).unwrap();
        let q = q_values(&ssp, &policy, &theta).unwrap();
        let psi = psi_tables(&policy, &theta, ssp.mdp.num_states()).unwrap();
        let r = project_q(&q.q, &psi, &stat.eta).unwrap();
        let projected: Vec<f64> = (0..q.q.len()).map(|k| psi.iter().zip(&r).map(|(p, ri)| ri * p[k]).sum()).collect();
        let residual: Vec<f64> = q.q.iter().zip(&projected).map(|(a, b)| a - b).collect();
        for p in &psi {
            let lhs = weighted_inner_product(&q.q, p, &stat.eta);
            let rhs = weighted_inner_product(&projected, p, &stat.eta);
            assert!((lhs - rhs).abs() <= 1e-8, "{lhs} vs {rhs}");
            assert!(weighted_inner_product(&residual, p, &stat.eta).abs() <= 1e-8);
        }
    }
}

#[test]
fn projection_recovers_elements_of_the_span() {
    for (ssp, policy, theta) in projection_fixtures() {
        let restart = apply_restart_modification(&ssp).unwrap();
        let stat = stationary_distribution(&restart, &policy, &theta).unwrap();
        let psi = psi_tables(&policy, &theta, ssp.mdp.num_states()).unwrap();
        let coeffs = [0.75, -1.5];
        let f: Vec<f64> = (0..psi[0].len()).map(|k| coeffs[0] * psi[0][k] + coeffs[1] * psi[1][k]).collect();
        let r = project_q(&f, &psi, &stat.eta).unwrap();
        for i in 0..2 {
            assert!((r[i] - coeffs[i]).abs() <= 1e-6, "{r:?}");
        }
    }
}

#[test]
fn stationary_distribution_is_invariant_and_marginal_consistent() {
    for (ssp, policy, theta) in projection_fixtures() {
        let restart = apply_restart_modification(&ssp).unwrap();
        let stat = stationary_distribution(&restart, &policy, &theta).unwrap();
        let mu = policy_table(&policy, &theta, ssp.mdp.num_states()).unwrap();
        let na = ssp.mdp.num_actions();
        let mut next = vec![0.0; stat.pi.len()];
        for x in 0..stat.pi.len() {
            for u in restart.available_actions(x) {
                for &(j, p) in restart.row(x, u) {
                    next[j] += stat.pi[x] * mu[x * na + u] * p;
                }
            }
            let marginal: f64 = (0..na).map(|u| stat.eta[x * na + u]).sum();
            assert!((marginal - stat.pi[x]).abs() <= 1e-15);
        }
        assert!((stat.pi.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for x in 0..next.len() {
            assert!((next[x] - stat.pi[x]).abs() <= 1e-10);
        }
    }
}

#[test]
fn gradient_identity_direction_on_equal_cycle_fixture() {
    let (problem, features) = branch_fixture();
    let ssp = mrp_to_ssp(&problem).unwrap();
    let policy = BoltzmannPolicy::new(ssp.lift_features(&features).unwrap());
    let restart = apply_restart_modification(&ssp).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(85);
    for _ in 0..10 {
        let theta = PolicyParams(vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]);
        let cmp = compare_gradients(&ssp, &restart, &policy, &theta, 1e-5).unwrap();
        assert!(cmp.cosine >= 0.99, "{cmp:?}");
        assert!(cmp.magnitude_ratio > 0.0);
    }
}

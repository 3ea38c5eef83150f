use super::*;
use crate::fields::Conductance;
use crate::space::{build_space, SpaceSpec};
use crate::transport::{interpolate, lift_geodesic_plan, solve_w2};
use approx::assert_abs_diff_eq;
use proptest::prelude::*;

fn two_point_unit() -> (FiniteMetricMeasureSpace, DirichletForm) {
    let space = FiniteMetricMeasureSpace::from_edges(2, &[(0, 1, 1.0)], vec![1.0, 1.0]).unwrap();
    let form = DirichletForm::from_edges(&space, &[Conductance { i: 0, j: 1, c: 1.0 }]).unwrap();
    (space, form)
}

fn two_point_half() -> FiniteMetricMeasureSpace {
    build_space(&SpaceSpec::interval(2, 1.0)).unwrap()
}

fn binary_entropy(p: f64) -> f64 {
    let term = |q: f64| if q > 0.0 { q * (2.0 * q).ln() } else { 0.0 };
    term(p) + term(1.0 - p)
}

/// Minimizes a unimodal function on `[lo, hi]` by a dense sweep followed by
/// golden-section refinement.
fn minimize_scalar(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let steps = 10_000;
    let mut best = lo;
    for k in 0..=steps {
        let x = lo + (hi - lo) * k as f64 / steps as f64;
        if f(x) < f(best) {
            best = x;
        }
    }
    let width = (hi - lo) / steps as f64;
    let (mut a, mut b) = ((best - width).max(lo), (best + width).min(hi));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let (c, d) = (b - g * (b - a), a + g * (b - a));
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

#[test]
fn entropy_examples() {
    let space = FiniteMetricMeasureSpace::from_edges(
        4,
        &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)],
        vec![0.25; 4],
    )
    .unwrap();
    let m = ProbabilityMeasure::reference(&space);
    assert_abs_diff_eq!(entropy(&space, &m), 0.0, epsilon = 1e-15);
    let delta = ProbabilityMeasure::dirac(4, 2);
    assert_abs_diff_eq!(entropy(&space, &delta), 4f64.ln(), epsilon = 1e-15);
    let half = ProbabilityMeasure::new(vec![0.5, 0.5, 0.0, 0.0]).unwrap();
    assert_abs_diff_eq!(entropy(&space, &half), 2f64.ln(), epsilon = 1e-15);
}

#[test]
fn entropy_is_bounded_below_by_log_total_mass() {
    let space = build_space(&SpaceSpec::circle(12, 3.0)).unwrap();
    let bound = -space.total_mass().ln();
    for k in 0..50 {
        let w: Vec<f64> = (0..12)
            .map(|i| ((i * 7 + k * 13) % 11) as f64 + 0.01)
            .collect();
        let mu = ProbabilityMeasure::normalized(w).unwrap();
        assert!(entropy(&space, &mu) >= bound - 1e-14);
    }
    let m = ProbabilityMeasure::reference(&space);
    assert_abs_diff_eq!(entropy(&space, &m), bound, epsilon = 1e-14);
}

#[test]
fn fisher_examples() {
    let (_, form) = two_point_unit();
    assert_abs_diff_eq!(fisher_density(&form, &[1.0, 1.0]), 0.0, epsilon = 1e-15);
    assert_abs_diff_eq!(fisher_density(&form, &[1.0, 0.0]), 4.0, epsilon = 1e-15);
    let rho = [1.5, 0.5];
    let f = fisher_density(&form, &rho);
    assert_abs_diff_eq!(f, 1.071797, epsilon = 1e-6);
    let roots: Vec<f64> = rho.iter().map(|r: &f64| r.sqrt()).collect();
    assert_abs_diff_eq!(f, 8.0 * form.energy(&roots), epsilon = 1e-14);
    assert_abs_diff_eq!(f.sqrt(), 1.035277, epsilon = 1e-6);
}

#[test]
fn slope_grows_as_mass_concentrates() {
    let (space, form) = two_point_unit();
    let m = ProbabilityMeasure::reference(&space);
    assert_abs_diff_eq!(entropy_slope(&form, &m), 0.0, epsilon = 1e-15);
    let mut last = 0.0;
    for eps in [1e-1, 1e-2, 1e-3, 1e-4, 1e-6] {
        let mu = ProbabilityMeasure::new(vec![1.0 - eps, eps]).unwrap();
        let s = entropy_slope(&form, &mu);
        assert!(s.is_finite() && s > last);
        last = s;
    }
}

#[test]
fn slope_oracle_simple_cases() {
    let space = build_space(&SpaceSpec::interval(5, 1.0)).unwrap();
    let m = ProbabilityMeasure::reference(&space);
    let cands = [
        ProbabilityMeasure::dirac(5, 0),
        ProbabilityMeasure::new(vec![0.2; 5]).unwrap(),
    ];
    let at_m = slope_oracle(&space, &m, &cands, TransportModel::Graph).unwrap();
    assert_eq!(at_m.value, 0.0);
    assert_eq!(at_m.best, None);
    let mu = ProbabilityMeasure::new(vec![0.5, 0.3, 0.1, 0.1, 0.0]).unwrap();
    let single =
        slope_oracle(&space, &mu, std::slice::from_ref(&m), TransportModel::Graph).unwrap();
    let expected = entropy(&space, &mu) / solve_w2(&space, &mu, &m).unwrap().w2;
    assert_abs_diff_eq!(single.value, expected, epsilon = 1e-14);
    let same = slope_oracle(
        &space,
        &mu,
        std::slice::from_ref(&mu),
        TransportModel::Graph,
    )
    .unwrap();
    assert_eq!(same.value, 0.0);
}

#[test]
fn two_point_slope_sweep_matches_scalar_maximization() {
    // On two points the graph distance is W₂ = √|Δp|, so the quotient
    // (Ent(μ) − Ent(ν))/W₂ peaks at a finite distance and the sweep
    // recovers it; it stays well below the Fisher slope.
    let space = two_point_half();
    let form = DirichletForm::grid(&space);
    let mu = ProbabilityMeasure::new(vec![0.75, 0.25]).unwrap();
    let cands: Vec<ProbabilityMeasure> = (0..=1000)
        .map(|k| ProbabilityMeasure::new(vec![k as f64 / 1000.0, 1.0 - k as f64 / 1000.0]).unwrap())
        .collect();
    let sweep = slope_oracle(&space, &mu, &cands, TransportModel::Graph).unwrap();
    let ent = binary_entropy(0.75);
    let quotient = |p: f64| -(ent - binary_entropy(p)) / (0.75 - p).sqrt();
    let p_star = minimize_scalar(quotient, 0.0, 0.7499);
    assert_abs_diff_eq!(sweep.value, -quotient(p_star), epsilon = 1e-3);
    assert!(sweep.value <= -quotient(p_star) + 1e-12);
    assert!(sweep.value <= entropy_slope(&form, &mu));
    assert_abs_diff_eq!(entropy_slope(&form, &mu), 1.035277, epsilon = 1e-6);
}

#[test]
fn jko_fixed_point_at_reference_measure() {
    for (spec, model) in [
        (SpaceSpec::interval(6, 1.0), TransportModel::Graph),
        (SpaceSpec::circle(16, 1.0), TransportModel::Cells),
        (SpaceSpec::interval(16, 1.0), TransportModel::Cells),
    ] {
        let space = build_space(&spec).unwrap();
        let m = ProbabilityMeasure::reference(&space);
        let opts = JkoOptions {
            model,
            ..JkoOptions::default()
        };
        let (next, diag) = jko_step(&space, &m, 0.05, &opts).unwrap();
        assert!(next.total_variation(&m) <= 1e-9, "{model:?}");
        assert!(diag.objective <= entropy(&space, &m) + 1e-12);
        let traj = jko_flow(&space, &m, 0.05, 0.2, &opts).unwrap();
        assert_eq!(traj.measures.len(), 5);
        for mu in &traj.measures {
            assert!(mu.total_variation(&m) <= 1e-9);
        }
    }
}

#[test]
fn jko_two_point_first_step_and_freeze() {
    let space = two_point_half();
    let opts = JkoOptions::default();
    let delta = ProbabilityMeasure::dirac(2, 0);
    let traj = jko_flow(&space, &delta, 1.0, 2.0, &opts).unwrap();
    let p = 0.5f64.exp() / (1.0 + 0.5f64.exp());
    assert_abs_diff_eq!(p, 0.622459, epsilon = 1e-6);
    // Independent scalar minimization of (prev_a − p)·d²/(2h) + Ent.
    let objective = |prev: f64| move |p: f64| (prev - p).abs() / 2.0 + binary_entropy(p);
    let p1 = minimize_scalar(objective(1.0), 0.0, 1.0);
    let step1 = traj.measures[1].weights()[0];
    assert_abs_diff_eq!(step1, p, epsilon = 1e-9);
    assert_abs_diff_eq!(p1, p, epsilon = 1e-7);
    // From (p, 1 − p) the transport term is |q|/2 with q the moved mass, and
    // stationarity at q = 0 already holds, so the scheme stays put.
    let p2 = minimize_scalar(objective(step1), 0.0, 1.0);
    let step2 = traj.measures[2].weights()[0];
    assert_abs_diff_eq!(step2, p2, epsilon = 1e-7);
    assert_abs_diff_eq!(step2, step1, epsilon = 1e-9);
    let rec = &traj.records[0].diagnostics;
    assert!(rec.first_order_residual <= 1e-8);
    assert!(rec.marginal_violation <= 1e-10);
    assert!(rec.gap.unwrap() <= 1e-9);
}

/// Row-major 3×3 cells of the spanning trees of the complete bipartite
/// graph `K₃,₃`.
fn spanning_trees_3x3() -> Vec<[usize; 5]> {
    let mut trees = Vec::new();
    for mask in 0u32..512 {
        if mask.count_ones() != 5 {
            continue;
        }
        let cells: Vec<usize> = (0..9).filter(|k| mask >> k & 1 == 1).collect();
        let mut parent: Vec<usize> = (0..6).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            if p[x] != x {
                let r = find(p, p[x]);
                p[x] = r;
            }
            p[x]
        }
        let mut acyclic = true;
        for &k in &cells {
            let (a, b) = (find(&mut parent, k / 3), find(&mut parent, 3 + k % 3));
            if a == b {
                acyclic = false;
                break;
            }
            parent[a] = b;
        }
        if acyclic {
            trees.push([cells[0], cells[1], cells[2], cells[3], cells[4]]);
        }
    }
    trees
}

/// Exact 3×3 transport cost by evaluating every basic solution.
fn transport_3x3(trees: &[[usize; 5]], cost: &[f64; 9], a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let mut best = f64::INFINITY;
    'tree: for tree in trees {
        let mut supply = [a[0], a[1], a[2], b[0], b[1], b[2]];
        let mut open = tree.to_vec();
        let mut total = 0.0;
        let ends = |k: usize| [k / 3, 3 + k % 3];
        while !open.is_empty() {
            let (node, pos) = (0..6)
                .find_map(|v| {
                    let touching: Vec<usize> = (0..open.len())
                        .filter(|&p| ends(open[p]).contains(&v))
                        .collect();
                    (touching.len() == 1).then(|| (v, touching[0]))
                })
                .unwrap();
            let k = open.swap_remove(pos);
            let flow = supply[node];
            if flow < -1e-12 {
                continue 'tree;
            }
            for e in ends(k) {
                supply[e] -= flow;
            }
            total += flow * cost[k];
        }
        best = best.min(total);
    }
    best
}

#[test]
fn three_point_jko_matches_simplex_grid_search() {
    let space =
        FiniteMetricMeasureSpace::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.5)], vec![0.5, 1.0, 0.7])
            .unwrap();
    let h = 0.2;
    let mu = ProbabilityMeasure::new(vec![0.62, 0.08, 0.30]).unwrap();
    let (next, diag) = jko_step(&space, &mu, h, &JkoOptions::default()).unwrap();
    let trees = spanning_trees_3x3();
    assert_eq!(trees.len(), 81);
    let mut cost = [0.0; 9];
    for k in 0..9 {
        cost[k] = space.dist(k / 3, k % 3).powi(2) / (2.0 * h);
    }
    let a = [mu.weights()[0], mu.weights()[1], mu.weights()[2]];
    let m = space.measure();
    let objective = |b: [f64; 3]| transport_3x3(&trees, &cost, &a, &b) + entropy_of(m, &b);
    let res = 1000;
    let mut best = (f64::INFINITY, [0.0; 3]);
    for i in 0..=res {
        for j in 0..=res - i {
            let b = [
                i as f64 / res as f64,
                j as f64 / res as f64,
                (res - i - j) as f64 / res as f64,
            ];
            let v = objective(b);
            if v < best.0 {
                best = (v, b);
            }
        }
    }
    let tv = 0.5
        * next
            .weights()
            .iter()
            .zip(&best.1)
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>();
    assert!(tv <= 2e-3, "tv {tv}");
    let w = next.weights();
    assert_abs_diff_eq!(
        diag.objective,
        objective([w[0], w[1], w[2]]),
        epsilon = 1e-12
    );
    assert!(best.0 >= diag.objective - 1e-10);
}

#[test]
fn graph_jko_step_certificate_on_grid() {
    let space = build_space(&SpaceSpec::interval(12, 1.0)).unwrap();
    let w: Vec<f64> = (0..12)
        .map(|i| if i < 4 { 1.0 + i as f64 } else { 0.0 })
        .collect();
    let mu = ProbabilityMeasure::normalized(w).unwrap();
    for h in [1e-2, 1e-1] {
        let (next, diag) = jko_step(&space, &mu, h, &JkoOptions::default()).unwrap();
        assert!(diag.marginal_violation <= 1e-10);
        assert!(diag.first_order_residual <= 1e-8);
        assert!(diag.gap.unwrap() >= -1e-9 && diag.gap.unwrap() <= 1e-8);
        assert!(diag.objective <= entropy(&space, &mu));
        assert!(entropy(&space, &next) <= entropy(&space, &mu));
    }
}

#[test]
fn cells_jko_step_beats_perturbations() {
    let space = build_space(&SpaceSpec::circle(24, 1.0)).unwrap();
    let grid = crate::transport::cells::CellGrid::from_space(&space).unwrap();
    let w: Vec<f64> = (0..24)
        .map(|i| 1.0 + 0.8 * (2.0 * std::f64::consts::PI * i as f64 / 24.0).cos())
        .collect();
    let mu = ProbabilityMeasure::normalized(w).unwrap();
    let h = 1e-3;
    let (next, diag) = jko_step(&space, &mu, h, &JkoOptions::cells()).unwrap();
    let objective = |nu: &[f64]| {
        grid.squared_w2(mu.weights(), nu) / (2.0 * h) + entropy_of(space.measure(), nu)
    };
    assert_abs_diff_eq!(diag.objective, objective(next.weights()), epsilon = 1e-12);
    for k in 0..40 {
        let dir: Vec<f64> = (0..24).map(|i| ((i * 31 + k * 17) as f64).sin()).collect();
        let mean = dir.iter().sum::<f64>() / 24.0;
        for eps in [1e-3, 1e-5] {
            let trial: Vec<f64> = next
                .weights()
                .iter()
                .zip(&dir)
                .map(|(v, d)| v + eps * v * (d - mean))
                .collect();
            let total: f64 = trial.iter().sum();
            let trial: Vec<f64> = trial.iter().map(|v| v / total).collect();
            assert!(objective(&trial) >= diag.objective - 1e-12);
        }
    }
    assert!(entropy(&space, &next) < entropy(&space, &mu));
}

#[test]
fn jko_flow_entropy_decreases_and_steps_are_summable() {
    let space = build_space(&SpaceSpec::interval(10, 1.0)).unwrap();
    let w: Vec<f64> = (0..10).map(|i| ((i * 5) % 7) as f64 + 0.1).collect();
    let mu0 = ProbabilityMeasure::normalized(w).unwrap();
    let h = 0.05;
    for opts in [JkoOptions::default(), JkoOptions::cells()] {
        let traj = jko_flow(&space, &mu0, h, 0.5, &opts).unwrap();
        assert_eq!(traj.records.len(), 10);
        let mut prev = entropy(&space, &mu0);
        let mut kinetic = 0.0;
        for rec in &traj.records {
            assert!(rec.entropy <= prev + 1e-12);
            prev = rec.entropy;
            kinetic += rec.w2 * rec.w2 / (2.0 * h);
        }
        let floor = -space.total_mass().ln();
        assert!(kinetic <= entropy(&space, &mu0) - floor + 1e-9);
        assert_eq!(traj.at(0.0), &mu0);
        assert_eq!(traj.at(0.07), &traj.measures[2]);
    }
}

#[test]
fn ede_constant_curve_is_all_zero() {
    let space = build_space(&SpaceSpec::circle(8, 1.0)).unwrap();
    let form = DirichletForm::grid(&space);
    let m = ProbabilityMeasure::reference(&space);
    let curve = MeasureCurve::new(vec![0.0, 0.5, 1.0], vec![m.clone(), m.clone(), m]).unwrap();
    let report = ede_report(&space, &form, &curve, TransportModel::Graph).unwrap();
    assert_eq!(report.entropy_drop, 0.0);
    assert_eq!(report.kinetic, 0.0);
    assert_abs_diff_eq!(report.slope_term, 0.0, epsilon = 1e-20);
    assert_abs_diff_eq!(report.deficit, 0.0, epsilon = 1e-20);
    assert_eq!(report.velocity_violations, 0);
}

#[test]
fn ede_geodesic_has_positive_deficit() {
    let n = 40;
    let space = build_space(&SpaceSpec::interval(n, 1.0)).unwrap();
    let form = DirichletForm::grid(&space);
    let bump = |c: f64| {
        let w: Vec<f64> = (0..n)
            .map(|i| (-((i as f64 / (n - 1) as f64 - c) / 0.1).powi(2)).exp() + 0.05)
            .collect();
        ProbabilityMeasure::from_density(space.measure(), &w).unwrap()
    };
    let (a, b) = (bump(0.3), bump(0.7));
    let sol = solve_w2(&space, &a, &b).unwrap();
    let gplan = lift_geodesic_plan(&space, &sol.plan).unwrap();
    let times: Vec<f64> = (0..=20).map(|k| k as f64 / 20.0).collect();
    let measures = times
        .iter()
        .map(|&t| interpolate(&gplan, t).unwrap())
        .collect();
    let curve = MeasureCurve::new(times, measures).unwrap();
    let report = ede_report(&space, &form, &curve, TransportModel::Graph).unwrap();
    assert!(report.deficit > 0.1 * report.kinetic.max(report.slope_term));
    assert!(report.kinetic > 0.0);
}

#[test]
fn g_gamma_examples() {
    let space = build_space(&SpaceSpec::interval(5, 1.0)).unwrap();
    let m = ProbabilityMeasure::reference(&space);
    let mu = ProbabilityMeasure::new(vec![0.1, 0.4, 0.2, 0.2, 0.1]).unwrap();
    let identity = Coupling::identity(&m);
    assert_abs_diff_eq!(
        g_gamma(&space, &identity, &mu).unwrap(),
        0.0,
        epsilon = 1e-15
    );
    let product = Coupling::product(&m, &m);
    assert_abs_diff_eq!(
        g_gamma(&space, &product, &mu).unwrap(),
        entropy(&space, &mu) - entropy(&space, &m),
        epsilon = 1e-14
    );
}

fn simplex_point(raw: &[f64]) -> ProbabilityMeasure {
    ProbabilityMeasure::normalized(raw.iter().map(|v| v + 1e-3).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn fisher_is_convex(
        a in prop::collection::vec(0.0f64..3.0, 6),
        b in prop::collection::vec(0.0f64..3.0, 6),
        alpha in 0.0f64..1.0,
    ) {
        let space = build_space(&SpaceSpec::circle(6, 1.0)).unwrap();
        let form = DirichletForm::grid(&space);
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| alpha * x + (1.0 - alpha) * y).collect();
        let lhs = fisher_density(&form, &mix);
        let rhs = alpha * fisher_density(&form, &a) + (1.0 - alpha) * fisher_density(&form, &b);
        prop_assert!(lhs <= rhs + 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn g_gamma_is_convex(
        plan in prop::collection::vec(0.0f64..1.0, 25),
        a in prop::collection::vec(0.0f64..1.0, 5),
        b in prop::collection::vec(0.0f64..1.0, 5),
    ) {
        let space = build_space(&SpaceSpec::interval(5, 1.0)).unwrap();
        let total: f64 = plan.iter().sum::<f64>() + 25e-3;
        let plan = Coupling::new(5, 5, plan.iter().map(|v| (v + 1e-3) / total).collect()).unwrap();
        let (mu1, mu2) = (simplex_point(&a), simplex_point(&b));
        let g1 = g_gamma(&space, &plan, &mu1).unwrap();
        let g2 = g_gamma(&space, &plan, &mu2).unwrap();
        for alpha in [0.25, 0.5, 0.75] {
            let mix: Vec<f64> = mu1
                .weights()
                .iter()
                .zip(mu2.weights())
                .map(|(x, y)| alpha * x + (1.0 - alpha) * y)
                .collect();
            let mix = ProbabilityMeasure::normalized(mix).unwrap();
            let g = g_gamma(&space, &plan, &mix).unwrap();
            prop_assert!(g <= alpha * g1 + (1.0 - alpha) * g2 + 1e-10);
        }
    }
}

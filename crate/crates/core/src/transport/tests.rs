use super::*;
use crate::space::{build_space, geodesic_edges, SpaceSpec};
use approx::assert_abs_diff_eq;
use petgraph::algo::dijkstra;
use petgraph::graph::UnGraph;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn two_point() -> FiniteMetricMeasureSpace {
    FiniteMetricMeasureSpace::from_edges(2, &[(0, 1, 1.0)], vec![1.0, 1.0]).unwrap()
}

fn path3() -> FiniteMetricMeasureSpace {
    FiniteMetricMeasureSpace::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)], vec![1.0; 3]).unwrap()
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> FiniteMetricMeasureSpace {
    let mut edges = Vec::new();
    for i in 1..n {
        edges.push((rng.gen_range(0..i), i, rng.gen_range(0.2..2.0)));
    }
    for _ in 0..n {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if a != b && !edges.iter().any(|e| (e.0, e.1) == (a.min(b), a.max(b))) {
            edges.push((a.min(b), a.max(b), rng.gen_range(0.2..2.0)));
        }
    }
    let measure = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
    let edges = geodesic_edges(&edges, n).unwrap();
    FiniteMetricMeasureSpace::from_edges(n, &edges, measure).unwrap()
}

fn random_measure(rng: &mut ChaCha8Rng, n: usize, sparsity: f64) -> ProbabilityMeasure {
    let mut w: Vec<f64> = (0..n)
        .map(|_| {
            if rng.gen_bool(sparsity) {
                0.0
            } else {
                rng.gen_range(0.0..1.0)
            }
        })
        .collect();
    if w.iter().all(|x| *x == 0.0) {
        w[0] = 1.0;
    }
    ProbabilityMeasure::normalized(w).unwrap()
}

/// Exact optimum by enumerating every spanning-tree basis of the
/// transportation polytope.
fn vertex_oracle(cost: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let (m, n) = (a.len(), b.len());
    let cells = m * n;
    let k = m + n - 1;
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << cells) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let chosen: Vec<usize> = (0..cells).filter(|c| mask & (1 << c) != 0).collect();
        let mut rem: Vec<f64> = a.iter().chain(b).copied().collect();
        let mut alive = chosen.clone();
        let mut flow = vec![0.0; cells];
        let mut ok = true;
        while !alive.is_empty() {
            let degree = |node: usize, alive: &[usize]| {
                alive
                    .iter()
                    .filter(|&&c| c / n == node || m + c % n == node)
                    .count()
            };
            let leaf = (0..m + n).find(|&v| degree(v, &alive) == 1);
            let Some(v) = leaf else {
                ok = false;
                break;
            };
            let pos = alive
                .iter()
                .position(|&c| c / n == v || m + c % n == v)
                .unwrap();
            let c = alive.remove(pos);
            let x = rem[v];
            flow[c] = x;
            let other = if v < m { m + c % n } else { c / n };
            rem[v] = 0.0;
            rem[other] -= x;
        }
        if !ok || flow.iter().any(|f| *f < -1e-14) || rem.iter().any(|r| r.abs() > 1e-12) {
            continue;
        }
        best = best.min(flow.iter().zip(cost).map(|(f, c)| f * c).sum());
    }
    best
}

#[test]
fn identical_measures_are_at_distance_zero() {
    let space = build_space(&SpaceSpec::circle(9, 1.0)).unwrap();
    let mu = ProbabilityMeasure::normalized((1..=9).map(f64::from).collect()).unwrap();
    let sol = solve_w2(&space, &mu, &mu).unwrap();
    assert_abs_diff_eq!(sol.w2, 0.0, epsilon = 1e-14);
    for e in sol.plan.entries(SUPPORT_TOL) {
        assert_eq!(e.i, e.j);
    }
}

#[test]
fn two_point_transport_moves_everything() {
    let space = two_point();
    let sol = solve_w2(
        &space,
        &ProbabilityMeasure::dirac(2, 0),
        &ProbabilityMeasure::dirac(2, 1),
    )
    .unwrap();
    assert_abs_diff_eq!(sol.w2, 1.0, epsilon = 1e-15);
    assert_abs_diff_eq!(sol.plan.get(0, 1), 1.0, epsilon = 1e-15);
}

#[test]
fn dirac_to_uniform_on_interval_approaches_one_third() {
    let mut errors = Vec::new();
    for n in [50, 100, 200] {
        let space = build_space(&SpaceSpec::interval(n, 1.0)).unwrap();
        let sol = solve_w2(
            &space,
            &ProbabilityMeasure::dirac(n, 0),
            &ProbabilityMeasure::reference(&space),
        )
        .unwrap();
        errors.push((sol.w2 * sol.w2 - 1.0 / 3.0).abs());
    }
    assert!(errors.windows(2).all(|w| w[1] < w[0]));
    assert!(errors[2] < 1e-4, "{errors:?}");
}

#[test]
fn mass_mismatch_is_rejected() {
    let space = two_point();
    let mu = ProbabilityMeasure::dirac(2, 0);
    let nu = ProbabilityMeasure {
        weights: vec![0.5, 0.6],
    };
    assert!(matches!(
        solve_w2(&space, &mu, &nu),
        Err(Error::MassMismatch { .. })
    ));
}

#[test]
fn simplex_matches_vertex_enumeration_on_tiny_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let n = rng.gen_range(2..=3);
        let space = random_graph(&mut rng, n);
        let mu = random_measure(&mut rng, n, 0.2);
        let nu = random_measure(&mut rng, n, 0.2);
        let cost: Vec<f64> = space.dist_matrix().iter().map(|d| 0.5 * d * d).collect();
        let oracle = vertex_oracle(&cost, mu.weights(), nu.weights());
        let sol = solve_w2(&space, &mu, &nu).unwrap();
        assert_abs_diff_eq!(sol.certificate.primal_cost, oracle, epsilon = 1e-12);
    }
}

#[test]
fn certificates_and_triangle_inequality_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..60 {
        let n = rng.gen_range(2..=20);
        let space = random_graph(&mut rng, n);
        let ms: Vec<_> = (0..3).map(|_| random_measure(&mut rng, n, 0.3)).collect();
        let d = |a: usize, b: usize| {
            let sol = solve_w2(&space, &ms[a], &ms[b]).unwrap();
            let audit = sol.certificate.audit(&space, &sol.plan);
            assert!(audit.passed(CERT_TOL), "{audit:?}");
            for (row, w) in sol.plan.first_marginal().iter().zip(ms[a].weights()) {
                assert_abs_diff_eq!(row, w, epsilon = 1e-10);
            }
            sol.w2
        };
        let (ab, bc, ac, ba) = (d(0, 1), d(1, 2), d(0, 2), d(1, 0));
        assert!(ac <= ab + bc + 1e-9);
        assert_abs_diff_eq!(ab, ba, epsilon = 1e-9);
    }
}

#[test]
fn c_transform_closed_forms() {
    let space = two_point();
    assert_eq!(c_transform(&space, &[0.0, 0.0]), vec![0.0, 0.0]);
    let pc = c_transform(&space, &[0.0, -1.0]);
    assert_abs_diff_eq!(pc[0], 0.0, epsilon = 1e-15);
    assert_abs_diff_eq!(pc[1], 0.5, epsilon = 1e-15);
}

#[test]
fn double_transform_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let space = random_graph(&mut rng, 7);
    let phi: Vec<f64> = (0..7).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let pc = c_transform(&space, &phi);
    // Brute-force second transform written out independently.
    let mut pcc = vec![f64::INFINITY; 7];
    for x in 0..7 {
        for y in 0..7 {
            pcc[x] = f64::min(pcc[x], 0.5 * space.dist(x, y).powi(2) - pc[y]);
        }
    }
    assert_eq!(pcc, c_transform(&space, &pc));
    for x in 0..7 {
        assert!(pcc[x] >= phi[x]);
    }
    assert_eq!(c_transform(&space, &pcc), pc);
}

#[test]
fn potential_certificate_identity_plan() {
    let space = build_space(&SpaceSpec::circle(6, 1.0)).unwrap();
    let plan = Coupling::identity(&ProbabilityMeasure::reference(&space));
    let report = potential_certificate(&space, &[0.0; 6], &plan).unwrap();
    assert!(report.passed);
    assert_eq!(report.support_residual, 0.0);
}

#[test]
fn recovered_potential_for_dirac_to_uniform() {
    let n = 101;
    let space = build_space(&SpaceSpec::interval(n, 1.0)).unwrap();
    let sol = solve_w2(
        &space,
        &ProbabilityMeasure::dirac(n, 0),
        &ProbabilityMeasure::reference(&space),
    )
    .unwrap();
    let phi = c_transform(&space, &sol.certificate.psi);
    let x = space.coordinates().unwrap();
    let shift = phi[0];
    let dev = (0..n)
        .map(|i| (phi[i] - shift - (x[i] * x[i] / 2.0 - x[i])).abs())
        .fold(0.0, f64::max);
    assert!(dev < 1e-12, "{dev}");
    let report = potential_certificate(&space, &phi, &sol.plan).unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn push_forward_examples() {
    let space = build_space(&SpaceSpec::circle(5, 1.0)).unwrap();
    let m = ProbabilityMeasure::reference(&space);
    let mu = ProbabilityMeasure::normalized(vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    let id = push_forward_plan(&Coupling::identity(&m), &mu).unwrap();
    for (a, b) in id.weights().iter().zip(mu.weights()) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-15);
    }
    let prod = push_forward_plan(&Coupling::product(&m, &m), &mu).unwrap();
    for (a, b) in prod.weights().iter().zip(m.weights()) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-15);
    }
    let swap = Coupling::new(2, 2, vec![0.0, 0.5, 0.5, 0.0]).unwrap();
    let out = push_forward_plan(&swap, &ProbabilityMeasure::dirac(2, 0)).unwrap();
    assert_eq!(out.weights(), &[0.0, 1.0]);
    let lazy = Coupling::new(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    assert!(matches!(
        push_forward_plan(&lazy, &ProbabilityMeasure::dirac(2, 1)),
        Err(Error::NotAbsolutelyContinuous { index: 1 })
    ));
}

#[test]
fn geodesic_lift_examples() {
    let space = path3();
    let mu = ProbabilityMeasure::normalized(vec![1.0, 1.0, 1.0]).unwrap();
    let diag = lift_geodesic_plan(&space, &Coupling::identity(&mu)).unwrap();
    assert!(diag.paths.iter().all(|p| p.nodes.len() == 1));
    let plan = Coupling::new(3, 3, vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let g = lift_geodesic_plan(&space, &plan).unwrap();
    assert_eq!(g.paths[0].nodes, vec![0, 1, 2]);
    assert_eq!(g.paths[0].mass, 1.0);
    let half = interpolate(&g, 0.5).unwrap();
    assert_eq!(half.weights(), &[0.0, 1.0, 0.0]);
    assert_eq!(interpolate(&g, 0.0).unwrap().weights(), &[1.0, 0.0, 0.0]);
    assert_eq!(interpolate(&g, 1.0).unwrap().weights(), &[0.0, 0.0, 1.0]);
}

#[test]
fn antipodal_tie_on_circle_is_deterministic() {
    let space = build_space(&SpaceSpec::circle(8, 1.0)).unwrap();
    let mut plan = vec![0.0; 64];
    plan[4] = 1.0;
    let plan = Coupling::new(8, 8, plan).unwrap();
    let g1 = lift_geodesic_plan(&space, &plan).unwrap();
    let g2 = lift_geodesic_plan(&space, &plan).unwrap();
    assert_eq!(g1, g2);
    assert_eq!(g1.paths[0].nodes, vec![0, 1, 2, 3, 4]);
    let mut graph = UnGraph::<(), f64>::new_undirected();
    let nodes: Vec<_> = (0..8).map(|_| graph.add_node(())).collect();
    for (i, j, len) in space.edges() {
        graph.add_edge(nodes[i], nodes[j], len);
    }
    let oracle = dijkstra(&graph, nodes[0], Some(nodes[4]), |e| *e.weight());
    assert_abs_diff_eq!(g1.paths[0].length(), oracle[&nodes[4]], epsilon = 1e-15);
    assert_abs_diff_eq!(g1.paths[0].length(), 0.5, epsilon = 1e-15);
}

#[test]
fn metric_speed_examples() {
    let space = two_point();
    let a = ProbabilityMeasure::dirac(2, 0);
    let b = ProbabilityMeasure::dirac(2, 1);
    let constant = MeasureCurve::new(vec![0.0, 0.5, 1.0], vec![a.clone(); 3]).unwrap();
    assert!(metric_speed(&space, &constant, TransportModel::Graph)
        .unwrap()
        .iter()
        .all(|s| *s == 0.0));
    let jump = MeasureCurve::new(vec![0.0, 0.5], vec![a, b]).unwrap();
    assert_eq!(
        metric_speed(&space, &jump, TransportModel::Graph).unwrap(),
        vec![2.0]
    );
}

#[test]
fn displacement_interpolation_has_constant_speed() {
    let n = 40;
    let space = build_space(&SpaceSpec::interval(n, 1.0)).unwrap();
    let x = space.coordinates().unwrap();
    let mu = ProbabilityMeasure::from_density(
        space.measure(),
        &x.iter()
            .map(|x| (-(x - 0.2).powi(2) / 0.005).exp())
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let nu = ProbabilityMeasure::from_density(
        space.measure(),
        &x.iter()
            .map(|x| (-(x - 0.7).powi(2) / 0.01).exp())
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let sol = solve_w2(&space, &mu, &nu).unwrap();
    let g = lift_geodesic_plan(&space, &sol.plan).unwrap();
    let times = vec![0.0, 0.25, 0.5, 0.75, 1.0];
    let measures: Vec<_> = times.iter().map(|&t| interpolate(&g, t).unwrap()).collect();
    let dx = space.spacing().unwrap();
    for s in 0..5 {
        for t in s + 1..5 {
            let d = solve_w2(&space, &measures[s], &measures[t]).unwrap().w2;
            assert!((d - (times[t] - times[s]) * sol.w2).abs() <= dx + 1e-12);
        }
    }
    let curve = MeasureCurve::new(times, measures).unwrap();
    let speeds = metric_speed(&space, &curve, TransportModel::Graph).unwrap();
    for s in &speeds {
        assert!((s - sol.w2).abs() <= 4.0 * dx + 1e-9, "{speeds:?}");
    }
}

#[test]
fn coupling_roundtrips_through_sparse_triplets() {
    let plan = Coupling::new(2, 3, vec![0.25, 0.0, 0.25, 0.0, 0.5, 0.0]).unwrap();
    let file = CouplingFile::from(plan.clone());
    assert_eq!(file.entries.len(), 3);
    let back = Coupling::try_from(file).unwrap();
    assert_eq!(back, plan);
}

#[test]
fn cells_model_agrees_with_graph_model_for_far_apart_diracs() {
    let space = build_space(&SpaceSpec::circle(10, 1.0)).unwrap();
    let mu = ProbabilityMeasure::dirac(10, 1);
    let nu = ProbabilityMeasure::dirac(10, 4);
    let graph = w2_distance(&space, &mu, &nu, TransportModel::Graph).unwrap();
    let cells = w2_distance(&space, &mu, &nu, TransportModel::Cells).unwrap();
    assert_abs_diff_eq!(graph, 0.3, epsilon = 1e-15);
    assert_abs_diff_eq!(cells, 0.3, epsilon = 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn c_transform_reverses_order(seed in any::<u64>(), n in 2usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let space = random_graph(&mut rng, n);
        let phi1: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let phi2: Vec<f64> = phi1.iter().map(|p| p + rng.gen_range(0.0..1.0)).collect();
        let (c1, c2) = (c_transform(&space, &phi1), c_transform(&space, &phi2));
        for y in 0..n {
            prop_assert!(c1[y] >= c2[y]);
        }
    }

    #[test]
    fn push_forward_preserves_mass_and_sign(seed in any::<u64>(), n in 2usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let space = random_graph(&mut rng, n);
        let a = random_measure(&mut rng, n, 0.0);
        let b = random_measure(&mut rng, n, 0.3);
        let plan = solve_w2(&space, &a, &b).unwrap().plan;
        let mu = random_measure(&mut rng, n, 0.3);
        let out = push_forward_plan(&plan, &mu).unwrap();
        prop_assert!(out.weights().iter().all(|w| *w >= 0.0));
        prop_assert!((out.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn optimal_pairs_satisfy_support_equality(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let space = random_graph(&mut rng, 10);
        let mu = random_measure(&mut rng, 10, 0.2);
        let nu = random_measure(&mut rng, 10, 0.2);
        let sol = solve_w2(&space, &mu, &nu).unwrap();
        let report = potential_certificate(&space, &sol.certificate.phi, &sol.plan).unwrap();
        prop_assert!(report.support_residual <= 1e-9, "{:?}", report);
        prop_assert!(report.worst_slope_slack >= -1e-9);
    }
}

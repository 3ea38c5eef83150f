//! Scalar fields on a space: slopes, Lipschitz constants, upper-gradient
//! audits along paths, and the discrete Dirichlet form.
//!
//! On a finite space every point is isolated, so limsup slopes vanish and an
//! L²-relaxation of squared slopes gives nothing. The Dirichlet form is
//! therefore supplied as data (edge conductances on the neighbor structure)
//! and its carré-du-champ stands in for the squared minimal relaxed
//! gradient. Slopes below are finite-scale difference quotients over the
//! declared neighbors.

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Error, Result};
use crate::space::{connected_components, FiniteMetricMeasureSpace, SpaceKind};

/// Path-audit threshold used by [`upper_gradient_violations`].
pub const UPPER_GRADIENT_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlopeKind {
    TwoSided,
    Ascending,
    Descending,
}

/// Neighbor-scale slope of `f`. Points without neighbors get 0.
pub fn local_slope(space: &FiniteMetricMeasureSpace, f: &[f64], kind: SlopeKind) -> Vec<f64> {
    assert_eq!(f.len(), space.n(), "field length must match the space");
    (0..space.n())
        .map(|x| {
            space
                .neighbors(x)
                .iter()
                .map(|nb| {
                    let diff = f[nb.index] - f[x];
                    let q = match kind {
                        SlopeKind::TwoSided => diff.abs(),
                        SlopeKind::Ascending => diff.max(0.0),
                        SlopeKind::Descending => (-diff).max(0.0),
                    };
                    q / nb.length
                })
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Smallest `L` with `|f(i) − f(j)| ≤ L·d(i,j)` over all pairs.
pub fn lipschitz_constant(space: &FiniteMetricMeasureSpace, f: &[f64]) -> f64 {
    assert_eq!(f.len(), space.n(), "field length must match the space");
    let n = space.n();
    let mut lip: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            lip = lip.max((f[i] - f[j]).abs() / space.dist(i, j));
        }
    }
    lip
}

/// `sup f − inf f`.
pub fn oscillation(f: &[f64]) -> f64 {
    let (lo, hi) = f
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if f.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// Node paths along neighbor edges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathFamily {
    paths: Vec<Vec<usize>>,
    lengths: Vec<Vec<f64>>,
}

impl PathFamily {
    pub fn new(space: &FiniteMetricMeasureSpace, paths: Vec<Vec<usize>>) -> Result<Self> {
        let mut lengths = Vec::with_capacity(paths.len());
        for (p, path) in paths.iter().enumerate() {
            if path.is_empty() {
                return Err(Error::InvalidArgument(format!("path {p} is empty")));
            }
            let mut lens = Vec::with_capacity(path.len().saturating_sub(1));
            for w in path.windows(2) {
                let len = space
                    .neighbors(w[0])
                    .iter()
                    .find(|nb| nb.index == w[1])
                    .map(|nb| nb.length)
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "path {p}: {} and {} are not neighbors",
                            w[0], w[1]
                        ))
                    })?;
                lens.push(len);
            }
            lengths.push(lens);
        }
        Ok(Self { paths, lengths })
    }

    /// Every neighbor edge as a one-step path.
    pub fn all_edges(space: &FiniteMetricMeasureSpace) -> Self {
        let paths = space
            .edges()
            .into_iter()
            .map(|(i, j, _)| vec![i, j])
            .collect();
        Self::new(space, paths).expect("edges are neighbor pairs")
    }

    pub fn paths(&self) -> &[Vec<usize>] {
        &self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn path_length(&self, p: usize) -> f64 {
        self.lengths[p].iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathViolation {
    pub path: usize,
    /// `|f(end) − f(start)| − ∫_γ G`, positive.
    pub excess: f64,
}

/// Paths along which `g` fails to be an upper gradient of `f`, with the
/// path integral taken as the trapezoid sum over edges.
pub fn upper_gradient_violations(f: &[f64], g: &[f64], paths: &PathFamily) -> Vec<PathViolation> {
    assert_eq!(f.len(), g.len(), "field and gradient lengths differ");
    let mut out = Vec::new();
    for (p, path) in paths.paths.iter().enumerate() {
        let integral: f64 = path
            .windows(2)
            .zip(&paths.lengths[p])
            .map(|(w, len)| 0.5 * (g[w[0]] + g[w[1]]) * len)
            .sum();
        let jump = (f[*path.last().unwrap()] - f[path[0]]).abs();
        let excess = jump - integral;
        if excess > UPPER_GRADIENT_TOL {
            out.push(PathViolation { path: p, excess });
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conductance {
    pub i: usize,
    pub j: usize,
    pub c: f64,
}

/// Symmetric edge conductances on the neighbor structure, together with the
/// reference measure they are paired with.
#[derive(Clone, Debug, PartialEq)]
pub struct DirichletForm {
    edges: Vec<Conductance>,
    measure: Vec<f64>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl DirichletForm {
    /// Conductances from an edge list. Each pair must be a neighbor pair of
    /// `space`; repeated pairs must agree.
    pub fn from_edges(space: &FiniteMetricMeasureSpace, edges: &[Conductance]) -> Result<Self> {
        let n = space.n();
        let mut merged: Vec<Conductance> = Vec::with_capacity(edges.len());
        for e in edges {
            if e.i >= n || e.j >= n || e.i == e.j {
                return Err(Error::InvalidArgument(format!(
                    "conductance edge ({}, {}) is not a pair of distinct points",
                    e.i, e.j
                )));
            }
            if !(e.c >= 0.0) || !e.c.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "conductance on ({}, {}) must be finite and nonnegative, got {}",
                    e.i, e.j, e.c
                )));
            }
            if !space.neighbors(e.i).iter().any(|nb| nb.index == e.j) {
                return Err(Error::InvalidArgument(format!(
                    "conductance edge ({}, {}) is not on the neighbor structure",
                    e.i, e.j
                )));
            }
            let (i, j) = (e.i.min(e.j), e.i.max(e.j));
            match merged.iter().find(|m| m.i == i && m.j == j) {
                Some(m) if m.c != e.c => {
                    return Err(Error::InvalidArgument(format!(
                        "asymmetric conductance on ({i}, {j}): {} vs {}",
                        m.c, e.c
                    )))
                }
                Some(_) => {}
                None => merged.push(Conductance { i, j, c: e.c }),
            }
        }
        merged.sort_by_key(|e| (e.i, e.j));
        let positive: Vec<_> = merged
            .iter()
            .filter(|e| e.c > 0.0)
            .map(|e| (e.i, e.j, e.c))
            .collect();
        let comps = connected_components(n, &positive);
        if comps.len() > 1 {
            return Err(Error::Disconnected { components: comps });
        }
        Ok(Self::assemble(merged, space.measure().to_vec()))
    }

    /// Grid conductances `c = m_edge/Δx²`: `1/Δx` on interval and circle
    /// edges, `1` on the 2-D torus. Other spaces fall back to
    /// [`DirichletForm::from_neighbors`].
    pub fn grid(space: &FiniteMetricMeasureSpace) -> Self {
        let c = match (space.kind(), space.spacing()) {
            (SpaceKind::Interval | SpaceKind::Circle, Some(dx)) => Some(1.0 / dx),
            (SpaceKind::Torus2d, Some(_)) => Some(1.0),
            _ => None,
        };
        match c {
            Some(c) => {
                let edges = space
                    .edges()
                    .into_iter()
                    .map(|(i, j, _)| Conductance { i, j, c })
                    .collect();
                Self::assemble(edges, space.measure().to_vec())
            }
            None => Self::from_neighbors(space),
        }
    }

    /// `c(i,j) = ½(m_i + m_j)/len(i,j)²` on every neighbor edge.
    pub fn from_neighbors(space: &FiniteMetricMeasureSpace) -> Self {
        let m = space.measure();
        let edges = space
            .edges()
            .into_iter()
            .map(|(i, j, len)| Conductance {
                i,
                j,
                c: 0.5 * (m[i] + m[j]) / (len * len),
            })
            .collect();
        Self::assemble(edges, m.to_vec())
    }

    fn assemble(edges: Vec<Conductance>, measure: Vec<f64>) -> Self {
        let mut adjacency = vec![Vec::new(); measure.len()];
        for e in &edges {
            adjacency[e.i].push((e.j, e.c));
            adjacency[e.j].push((e.i, e.c));
        }
        Self {
            edges,
            measure,
            adjacency,
        }
    }

    /// Same conductances paired with another reference measure.
    pub fn with_measure(&self, measure: Vec<f64>) -> Result<Self> {
        check_len(self.n(), measure.len())?;
        if let Some(index) = measure.iter().position(|m| !(*m > 0.0)) {
            return Err(Error::NonPositiveMeasure {
                index,
                value: measure[index],
            });
        }
        Ok(Self {
            measure,
            ..self.clone()
        })
    }

    pub fn n(&self) -> usize {
        self.measure.len()
    }

    pub fn edges(&self) -> &[Conductance] {
        &self.edges
    }

    pub fn measure(&self) -> &[f64] {
        &self.measure
    }

    pub fn adjacency(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    pub fn check_field(&self, f: &[f64]) -> Result<()> {
        check_len(self.n(), f.len())?;
        check_finite(f, "field")
    }

    /// `½ Σ_{edges} c (f_j − f_i)²`.
    pub fn energy(&self, f: &[f64]) -> f64 {
        0.5 * self
            .edges
            .iter()
            .map(|e| e.c * (f[e.j] - f[e.i]).powi(2))
            .sum::<f64>()
    }

    /// `Γ(f)(x) = (1/2m(x)) Σ_y c(x,y)(f(y) − f(x))²`, normalized so that
    /// `½ Σ m Γ(f) = energy(f)`.
    pub fn carre_du_champ(&self, f: &[f64]) -> Vec<f64> {
        (0..self.n())
            .map(|x| {
                let s: f64 = self.adjacency[x]
                    .iter()
                    .map(|&(y, c)| c * (f[y] - f[x]).powi(2))
                    .sum();
                s / (2.0 * self.measure[x])
            })
            .collect()
    }

    /// `Δf(x) = (1/m(x)) Σ_y c(x,y)(f(y) − f(x))`.
    pub fn laplacian(&self, f: &[f64]) -> Vec<f64> {
        let mut out = self.stiffness_apply(f);
        for (o, m) in out.iter_mut().zip(&self.measure) {
            *o = -*o / m;
        }
        out
    }

    /// Stiffness action `(K f)(x) = Σ_y c(x,y)(f(x) − f(y))`, so that
    /// `⟨K f, f⟩ = 2·energy(f)`.
    pub fn stiffness_apply(&self, f: &[f64]) -> Vec<f64> {
        (0..self.n())
            .map(|x| {
                self.adjacency[x]
                    .iter()
                    .map(|&(y, c)| c * (f[x] - f[y]))
                    .sum()
            })
            .collect()
    }

    pub fn to_records(&self) -> Vec<Conductance> {
        self.edges.clone()
    }
}

/// `Σ m f g`.
pub fn inner(measure: &[f64], f: &[f64], g: &[f64]) -> f64 {
    measure
        .iter()
        .zip(f)
        .zip(g)
        .map(|((m, a), b)| m * a * b)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{build_space, geodesic_edges, SpaceSpec};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn two_point() -> FiniteMetricMeasureSpace {
        FiniteMetricMeasureSpace::from_edges(2, &[(0, 1, 1.0)], vec![1.0, 1.0]).unwrap()
    }

    fn two_point_form() -> DirichletForm {
        DirichletForm::from_edges(&two_point(), &[Conductance { i: 0, j: 1, c: 1.0 }]).unwrap()
    }

    #[test]
    fn slopes_on_two_points() {
        let s = two_point();
        let f = [0.0, 1.0];
        assert_eq!(local_slope(&s, &f, SlopeKind::Ascending), vec![1.0, 0.0]);
        assert_eq!(local_slope(&s, &f, SlopeKind::Descending), vec![0.0, 1.0]);
        assert_eq!(local_slope(&s, &f, SlopeKind::TwoSided), vec![1.0, 1.0]);
        assert_eq!(lipschitz_constant(&s, &f), 1.0);
    }

    #[test]
    fn constant_field_is_flat() {
        let s = build_space(&SpaceSpec::circle(8, 1.0)).unwrap();
        let form = DirichletForm::grid(&s);
        let f = vec![3.5; 8];
        for kind in [
            SlopeKind::TwoSided,
            SlopeKind::Ascending,
            SlopeKind::Descending,
        ] {
            assert!(local_slope(&s, &f, kind).iter().all(|&v| v == 0.0));
        }
        assert_eq!(lipschitz_constant(&s, &f), 0.0);
        assert_eq!(form.energy(&f), 0.0);
        assert!(form.carre_du_champ(&f).iter().all(|&v| v == 0.0));
        assert!(form.laplacian(&f).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_function_has_unit_slope() {
        for n in [5, 17, 64] {
            let s = build_space(&SpaceSpec::interval(n, 1.0)).unwrap();
            let x = s.coordinates().unwrap();
            let slope = local_slope(&s, &x, SlopeKind::TwoSided);
            for v in &slope[1..n - 1] {
                assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn two_point_form_closed_forms() {
        let form = two_point_form();
        let f = [1.0, 0.0];
        assert_eq!(form.energy(&f), 0.5);
        assert_eq!(form.carre_du_champ(&f), vec![0.5, 0.5]);
        assert_eq!(form.laplacian(&f), vec![-1.0, 1.0]);
    }

    #[test]
    fn form_rejects_off_structure_and_disconnected() {
        let s = build_space(&SpaceSpec::interval(4, 1.0)).unwrap();
        assert!(DirichletForm::from_edges(&s, &[Conductance { i: 0, j: 2, c: 1.0 }]).is_err());
        let partial = [
            Conductance { i: 0, j: 1, c: 1.0 },
            Conductance { i: 2, j: 3, c: 1.0 },
        ];
        assert!(matches!(
            DirichletForm::from_edges(&s, &partial),
            Err(Error::Disconnected { .. })
        ));
    }

    #[test]
    fn sine_energy_converges_to_quadrature_value() {
        // Continuum value ½∫₀¹ (2π cos 2πx)² dx, by midpoint quadrature.
        let k = 200_000;
        let continuum: f64 = (0..k)
            .map(|i| {
                let x = (i as f64 + 0.5) / k as f64;
                0.5 * (2.0 * PI * (2.0 * PI * x).cos()).powi(2)
            })
            .sum::<f64>()
            / k as f64;
        assert_abs_diff_eq!(continuum, PI * PI, epsilon = 1e-8);
        let mut prev = f64::INFINITY;
        for n in [32, 64, 128] {
            let s = build_space(&SpaceSpec::circle(n, 1.0)).unwrap();
            let form = DirichletForm::grid(&s);
            let f: Vec<f64> = s
                .coordinates()
                .unwrap()
                .iter()
                .map(|x| (2.0 * PI * x).sin())
                .collect();
            let err = (form.energy(&f) - continuum).abs();
            assert!(err < prev, "energy error must shrink under refinement");
            prev = err;
        }
        assert!(prev < 1e-2);
    }

    #[test]
    fn sine_laplacian_second_order() {
        // Taylor: second difference of sin(kx) = −k² sin(kx)(1 − k²Δx²/12 + …).
        let n = 256;
        let s = build_space(&SpaceSpec::circle(n, 1.0)).unwrap();
        let dx = s.spacing().unwrap();
        let form = DirichletForm::grid(&s);
        let x = s.coordinates().unwrap();
        let f: Vec<f64> = x.iter().map(|x| (2.0 * PI * x).sin()).collect();
        let lap = form.laplacian(&f);
        let k2 = 4.0 * PI * PI;
        let max_err = x
            .iter()
            .zip(&lap)
            .map(|(x, l)| (l + k2 * (2.0 * PI * x).sin()).abs())
            .fold(0.0, f64::max);
        let bound = k2 * k2 * dx * dx / 12.0 * 1.01;
        assert!(max_err <= bound, "{max_err} > {bound}");
    }

    #[test]
    fn zero_gradient_flags_every_jump() {
        let s = build_space(&SpaceSpec::interval(5, 1.0)).unwrap();
        let f = [0.0, 1.0, 1.0, 2.0, 0.0];
        let paths = PathFamily::all_edges(&s);
        let v = upper_gradient_violations(&f, &[0.0; 5], &paths);
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn path_family_rejects_non_neighbors() {
        let s = build_space(&SpaceSpec::interval(5, 1.0)).unwrap();
        assert!(PathFamily::new(&s, vec![vec![0, 2]]).is_err());
        let p = PathFamily::new(&s, vec![vec![0, 1, 2, 3]]).unwrap();
        assert_abs_diff_eq!(p.path_length(0), 0.75, epsilon = 1e-15);
    }

    fn random_space() -> impl Strategy<Value = (FiniteMetricMeasureSpace, DirichletForm)> {
        (
            3usize..9,
            prop::collection::vec(0.2f64..2.0, 16),
            prop::collection::vec(0.1f64..3.0, 16),
            any::<u64>(),
        )
            .prop_map(|(n, lens, masses, seed)| {
                // A spanning path plus a few chords keeps the graph connected.
                let mut edges: Vec<(usize, usize, f64)> =
                    (0..n - 1).map(|i| (i, i + 1, lens[i])).collect();
                let mut s = seed;
                for k in 0..n / 2 {
                    s = s
                        .wrapping_mul(6364136223846793005)
                        .wrapping_add(1442695040888963407);
                    let a = (s >> 33) as usize % n;
                    let b = (s >> 17) as usize % n;
                    if a != b && !edges.iter().any(|e| (e.0, e.1) == (a.min(b), a.max(b))) {
                        edges.push((a.min(b), a.max(b), lens[8 + k]));
                    }
                }
                let edges = geodesic_edges(&edges, n).unwrap();
                let space =
                    FiniteMetricMeasureSpace::from_edges(n, &edges, masses[..n].to_vec()).unwrap();
                let conds: Vec<_> = edges
                    .iter()
                    .enumerate()
                    .map(|(k, &(i, j, _))| Conductance {
                        i,
                        j,
                        c: masses[(k + 3) % 16],
                    })
                    .collect();
                let form = DirichletForm::from_edges(&space, &conds).unwrap();
                (space, form)
            })
    }

    proptest! {
        #[test]
        fn form_identities(
            (space, form) in random_space(),
            fv in prop::collection::vec(-2.0f64..2.0, 9),
            gv in prop::collection::vec(-2.0f64..2.0, 9),
        ) {
            let n = space.n();
            let (f, g) = (&fv[..n], &gv[..n]);
            let m = form.measure();
            let gamma = form.carre_du_champ(f);
            let half: f64 = 0.5 * m.iter().zip(&gamma).map(|(a, b)| a * b).sum::<f64>();
            prop_assert!((half - form.energy(f)).abs() <= 1e-14 * (1.0 + form.energy(f)));
            let lf = form.laplacian(f);
            let lg = form.laplacian(g);
            let mass: f64 = m.iter().zip(&lf).map(|(a, b)| a * b).sum();
            prop_assert!(mass.abs() <= 1e-13);
            prop_assert!((inner(m, g, &lf) - inner(m, f, &lg)).abs() <= 1e-13);
            // ⟨Δf, f⟩_m = −2 energy
            prop_assert!((inner(m, f, &lf) + 2.0 * form.energy(f)).abs() <= 1e-13);
        }

        #[test]
        fn slope_invariants(
            (space, _form) in random_space(),
            fv in prop::collection::vec(-2.0f64..2.0, 9),
            gv in prop::collection::vec(-2.0f64..2.0, 9),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let n = space.n();
            let (f, g) = (&fv[..n], &gv[..n]);
            let neg: Vec<f64> = f.iter().map(|v| -v).collect();
            prop_assert_eq!(
                local_slope(&space, f, SlopeKind::Descending),
                local_slope(&space, &neg, SlopeKind::Ascending)
            );
            let comb: Vec<f64> = f.iter().zip(g).map(|(x, y)| a * x + b * y).collect();
            let sc = local_slope(&space, &comb, SlopeKind::TwoSided);
            let sf = local_slope(&space, f, SlopeKind::TwoSided);
            let sg = local_slope(&space, g, SlopeKind::TwoSided);
            for x in 0..n {
                prop_assert!(sc[x] <= a.abs() * sf[x] + b.abs() * sg[x] + 1e-12);
            }
            let paths = PathFamily::all_edges(&space);
            prop_assert!(upper_gradient_violations(f, &sf, &paths).is_empty());
            let lip = lipschitz_constant(&space, f);
            let all: Vec<Vec<usize>> = (0..n).map(|i| shortest_hop_path(&space, 0, i)).collect();
            let fam = PathFamily::new(&space, all).unwrap();
            prop_assert!(upper_gradient_violations(f, &vec![lip; n], &fam).is_empty());
        }
    }

    fn shortest_hop_path(space: &FiniteMetricMeasureSpace, from: usize, to: usize) -> Vec<usize> {
        let n = space.n();
        let mut prev = vec![usize::MAX; n];
        let mut queue = std::collections::VecDeque::from([from]);
        prev[from] = from;
        while let Some(u) = queue.pop_front() {
            for nb in space.neighbors(u) {
                if prev[nb.index] == usize::MAX {
                    prev[nb.index] = u;
                    queue.push_back(nb.index);
                }
            }
        }
        let mut path = vec![to];
        while *path.last().unwrap() != from {
            path.push(prev[*path.last().unwrap()]);
        }
        path.reverse();
        path
    }

    #[test]
    fn lipschitz_matches_pairwise_brute_force() {
        let pts: Vec<Vec<f64>> = (0..6)
            .map(|i| vec![(i as f64 * 0.7).sin(), i as f64 * 0.4])
            .collect();
        let s = build_space(&SpaceSpec::point_cloud(pts, 0.9)).unwrap();
        let f: [f64; 6] = [0.3, -1.2, 0.8, 2.0, -0.4, 1.1];
        let mut brute: f64 = 0.0;
        let mut pairs = 0;
        for i in 0..6 {
            for j in 0..6 {
                if i < j {
                    pairs += 1;
                    brute = brute.max((f[i] - f[j]).abs() / s.dist(i, j));
                }
            }
        }
        assert_eq!(pairs, 15);
        assert_eq!(lipschitz_constant(&s, &f), brute);
    }
}

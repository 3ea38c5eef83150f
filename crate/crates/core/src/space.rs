//! Finite metric measure spaces.
//!
//! A space is a dense distance matrix, a strictly positive reference measure
//! and a declared neighbor structure. The neighbor structure fixes the scale at
//! which slopes are evaluated and supports the Dirichlet forms of
//! [`crate::fields`]. Grid builders (interval, circle, 2-D torus) use the
//! graph shortest-path metric of their stencil, which coincides with the
//! Euclidean, arc and periodic ℓ¹ distances respectively.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Relative tolerance for the triangle inequality and edge-length checks.
pub const METRIC_TOL: f64 = 1e-12;

/// Above this size metric closure switches from Floyd–Warshall to
/// Dijkstra-per-source.
pub const FLOYD_WARSHALL_MAX: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceKind {
    Interval,
    Circle,
    Torus2d,
    PointCloud,
    Custom,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureRule {
    #[default]
    Uniform,
    Custom(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSpec {
    pub kind: SpaceKind,
    /// Point count; for `torus2d` the number of points per side.
    #[serde(default)]
    pub n: usize,
    /// Total length of the interval or circle, side length of the torus.
    #[serde(default)]
    pub length: Option<f64>,
    #[serde(default)]
    pub points: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub connect_radius: Option<f64>,
    #[serde(default)]
    pub measure_rule: MeasureRule,
}

impl SpaceSpec {
    pub fn interval(n: usize, length: f64) -> Self {
        Self::grid(SpaceKind::Interval, n, length)
    }

    pub fn circle(n: usize, length: f64) -> Self {
        Self::grid(SpaceKind::Circle, n, length)
    }

    pub fn torus2d(side: usize, length: f64) -> Self {
        Self::grid(SpaceKind::Torus2d, side, length)
    }

    pub fn point_cloud(points: Vec<Vec<f64>>, connect_radius: f64) -> Self {
        Self {
            kind: SpaceKind::PointCloud,
            n: points.len(),
            length: None,
            points: Some(points),
            connect_radius: Some(connect_radius),
            measure_rule: MeasureRule::Uniform,
        }
    }

    fn grid(kind: SpaceKind, n: usize, length: f64) -> Self {
        Self {
            kind,
            n,
            length: Some(length),
            points: None,
            connect_radius: None,
            measure_rule: MeasureRule::Uniform,
        }
    }

    pub fn with_measure(mut self, measure: Vec<f64>) -> Self {
        self.measure_rule = MeasureRule::Custom(measure);
        self
    }

    /// Total number of points the spec produces.
    pub fn point_count(&self) -> usize {
        match self.kind {
            SpaceKind::Torus2d => self.n * self.n,
            SpaceKind::PointCloud => self.points.as_ref().map_or(0, Vec::len),
            _ => self.n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        match self.kind {
            SpaceKind::Interval | SpaceKind::Circle | SpaceKind::Torus2d => {
                let min_n = if self.kind == SpaceKind::Circle { 3 } else { 2 };
                if self.n < min_n {
                    return bad(format!(
                        "{:?} needs n >= {min_n}, got {}",
                        self.kind, self.n
                    ));
                }
                match self.length {
                    Some(l) if l > 0.0 && l.is_finite() => {}
                    other => return bad(format!("length must be positive, got {other:?}")),
                }
            }
            SpaceKind::PointCloud => {
                let Some(points) = &self.points else {
                    return bad("point_cloud requires `points`".into());
                };
                if points.len() < 2 {
                    return bad(format!(
                        "point_cloud needs at least 2 points, got {}",
                        points.len()
                    ));
                }
                let dim = points[0].len();
                if dim == 0 || points.iter().any(|p| p.len() != dim) {
                    return bad("points must share a positive dimension".into());
                }
                if points.iter().flatten().any(|c| !c.is_finite()) {
                    return bad("point coordinates must be finite".into());
                }
                match self.connect_radius {
                    Some(r) if r > 0.0 && r.is_finite() => {}
                    other => return bad(format!("connect_radius must be positive, got {other:?}")),
                }
            }
            SpaceKind::Custom => {
                return bad("custom spaces are loaded from files, not built from a spec".into())
            }
        }
        if let MeasureRule::Custom(m) = &self.measure_rule {
            check_len(self.point_count(), m.len())?;
            check_measure(m)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub index: usize,
    pub length: f64,
}

/// Shape information kept from the builder. `spacing` is the grid step for
/// grid kinds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub kind: SpaceKind,
    pub spacing: Option<f64>,
    pub length: Option<f64>,
    pub side: Option<usize>,
}

impl Geometry {
    fn custom() -> Self {
        Self {
            kind: SpaceKind::Custom,
            spacing: None,
            length: None,
            side: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FiniteMetricMeasureSpace {
    n: usize,
    dist: Vec<f64>,
    measure: Vec<f64>,
    neighbors: Vec<Vec<Neighbor>>,
    labels: Option<Vec<Vec<f64>>>,
    weight: Option<Vec<f64>>,
    geometry: Geometry,
}

impl FiniteMetricMeasureSpace {
    /// Assembles a space from its parts and rejects it if any invariant fails.
    pub fn from_parts(
        dist: Vec<f64>,
        measure: Vec<f64>,
        neighbors: Vec<Vec<Neighbor>>,
    ) -> Result<Self> {
        let n = measure.len();
        check_len(n * n, dist.len())?;
        check_len(n, neighbors.len())?;
        check_measure(&measure)?;
        let space = Self::from_parts_unchecked(dist, measure, neighbors);
        let report = validate_space(&space);
        if report.is_empty() {
            Ok(space)
        } else {
            Err(Error::InvalidSpec(report.to_string()))
        }
    }

    /// Assembles a space without checking invariants. Intended for
    /// diagnostics; every other operation assumes a valid space.
    pub fn from_parts_unchecked(
        dist: Vec<f64>,
        measure: Vec<f64>,
        neighbors: Vec<Vec<Neighbor>>,
    ) -> Self {
        Self {
            n: measure.len(),
            dist,
            measure,
            neighbors,
            labels: None,
            weight: None,
            geometry: Geometry::custom(),
        }
    }

    /// Builds the shortest-path space of a weighted graph.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)], measure: Vec<f64>) -> Result<Self> {
        check_len(n, measure.len())?;
        check_measure(&measure)?;
        let dist = metric_closure(edges, n)?;
        let neighbors = neighbors_from_edges(n, edges);
        Self::from_parts(dist, measure, neighbors)
    }

    pub fn with_labels(mut self, labels: Vec<Vec<f64>>) -> Result<Self> {
        check_len(self.n, labels.len())?;
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_weight(mut self, weight: Vec<f64>) -> Result<Self> {
        check_len(self.n, weight.len())?;
        if let Some(i) = weight.iter().position(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "weight must be finite and nonnegative, got {} at {i}",
                weight[i]
            )));
        }
        self.weight = Some(weight);
        Ok(self)
    }

    /// Same points, distances and neighbors with a different reference measure.
    pub fn with_measure(&self, measure: Vec<f64>) -> Result<Self> {
        check_len(self.n, measure.len())?;
        check_measure(&measure)?;
        Ok(Self {
            measure,
            ..self.clone()
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.n + j]
    }

    /// Row-major distance matrix.
    pub fn dist_matrix(&self) -> &[f64] {
        &self.dist
    }

    pub fn measure(&self) -> &[f64] {
        &self.measure
    }

    pub fn total_mass(&self) -> f64 {
        self.measure.iter().sum()
    }

    pub fn neighbors(&self, i: usize) -> &[Neighbor] {
        &self.neighbors[i]
    }

    /// Undirected neighbor edges `(i, j, length)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (i, nbrs) in self.neighbors.iter().enumerate() {
            for nb in nbrs.iter().filter(|nb| nb.index > i) {
                out.push((i, nb.index, nb.length));
            }
        }
        out
    }

    /// Largest neighbor edge at `i`, the scale `r_x` of the discrete slope.
    pub fn max_edge(&self, i: usize) -> f64 {
        self.neighbors[i]
            .iter()
            .map(|nb| nb.length)
            .fold(0.0, f64::max)
    }

    pub fn min_edge(&self) -> f64 {
        self.neighbors
            .iter()
            .flatten()
            .map(|nb| nb.length)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn labels(&self) -> Option<&[Vec<f64>]> {
        self.labels.as_deref()
    }

    pub fn weight(&self) -> Option<&[f64]> {
        self.weight.as_deref()
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn kind(&self) -> SpaceKind {
        self.geometry.kind
    }

    /// Grid step of interval/circle/torus spaces.
    pub fn spacing(&self) -> Option<f64> {
        self.geometry.spacing
    }

    /// First coordinate of every point, if labels exist.
    pub fn coordinates(&self) -> Option<Vec<f64>> {
        self.labels
            .as_ref()
            .map(|l| l.iter().map(|p| p[0]).collect())
    }

    pub fn to_file(&self) -> SpaceFile {
        SpaceFile {
            kind: self.geometry.kind,
            n: self.n,
            length: self.geometry.length,
            spacing: self.geometry.spacing,
            side: self.geometry.side,
            measure: self.measure.clone(),
            edges: Some(
                self.edges()
                    .into_iter()
                    .map(|(i, j, len)| EdgeRecord { i, j, len })
                    .collect(),
            ),
            dist: Some(self.dist.chunks(self.n).map(<[f64]>::to_vec).collect()),
            labels: self.labels.clone(),
            weight: self.weight.clone(),
        }
    }

    /// Rebuilds a space from its file form. With only `edges`, distances
    /// come from the metric closure; with only `dist`, the neighbor
    /// structure is the set of pairs not shortcut through a third point.
    pub fn from_file(file: SpaceFile) -> Result<Self> {
        let n = file.n;
        check_len(n, file.measure.len())?;
        check_measure(&file.measure)?;
        let edge_list: Option<Vec<(usize, usize, f64)>> = file
            .edges
            .as_ref()
            .map(|e| e.iter().map(|r| (r.i, r.j, r.len)).collect());
        let dist = match (&file.dist, &edge_list) {
            (Some(rows), _) => {
                check_len(n, rows.len())?;
                let mut flat = Vec::with_capacity(n * n);
                for row in rows {
                    check_len(n, row.len())?;
                    flat.extend_from_slice(row);
                }
                flat
            }
            (None, Some(edges)) => metric_closure(edges, n)?,
            (None, None) => {
                return Err(Error::InvalidSpec(
                    "space file needs `edges` or `dist`".into(),
                ))
            }
        };
        let neighbors = match &edge_list {
            Some(edges) => neighbors_from_edges(n, edges),
            None => neighbors_from_dist(n, &dist),
        };
        let mut space = Self::from_parts(dist, file.measure, neighbors)?;
        space.geometry = Geometry {
            kind: file.kind,
            spacing: file.spacing,
            length: file.length,
            side: file.side,
        };
        if let Some(labels) = file.labels {
            space = space.with_labels(labels)?;
        }
        if let Some(weight) = file.weight {
            space = space.with_weight(weight)?;
        }
        Ok(space)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub i: usize,
    pub j: usize,
    pub len: f64,
}

/// JSON form of a space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceFile {
    pub kind: SpaceKind,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side: Option<usize>,
    pub measure: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<EdgeRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dist: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<Vec<f64>>,
}

fn check_measure(measure: &[f64]) -> Result<()> {
    match measure.iter().position(|m| !(*m > 0.0) || !m.is_finite()) {
        None => Ok(()),
        Some(index) => Err(Error::NonPositiveMeasure {
            index,
            value: measure[index],
        }),
    }
}

fn neighbors_from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Vec<Vec<Neighbor>> {
    let mut nbrs: Vec<Vec<Neighbor>> = vec![Vec::new(); n];
    for &(i, j, len) in edges {
        if i == j {
            continue;
        }
        for (a, b) in [(i, j), (j, i)] {
            match nbrs[a].iter_mut().find(|nb| nb.index == b) {
                Some(nb) => nb.length = nb.length.min(len),
                None => nbrs[a].push(Neighbor {
                    index: b,
                    length: len,
                }),
            }
        }
    }
    for list in &mut nbrs {
        list.sort_by_key(|nb| nb.index);
    }
    nbrs
}

fn neighbors_from_dist(n: usize, dist: &[f64]) -> Vec<Vec<Neighbor>> {
    let mut nbrs = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let dij = dist[i * n + j];
            let shortcut = (0..n).any(|k| {
                k != i && k != j && dist[i * n + k] + dist[k * n + j] <= dij * (1.0 + METRIC_TOL)
            });
            if !shortcut {
                nbrs[i].push(Neighbor {
                    index: j,
                    length: dij,
                });
            }
        }
    }
    nbrs
}

/// Builds a space from its spec.
pub fn build_space(spec: &SpaceSpec) -> Result<FiniteMetricMeasureSpace> {
    spec.validate()?;
    let mut space = match spec.kind {
        SpaceKind::Interval => interval(spec.n, spec.length.unwrap_or(1.0)),
        SpaceKind::Circle => circle(spec.n, spec.length.unwrap_or(1.0)),
        SpaceKind::Torus2d => torus2d(spec.n, spec.length.unwrap_or(1.0)),
        SpaceKind::PointCloud => point_cloud(
            spec.points.as_deref().unwrap_or_default(),
            spec.connect_radius.unwrap_or(0.0),
        )?,
        SpaceKind::Custom => unreachable!("rejected by validate"),
    };
    if let MeasureRule::Custom(m) = &spec.measure_rule {
        space.measure = m.clone();
    }
    Ok(space)
}

#[allow(clippy::too_many_arguments)]
fn grid_space(
    kind: SpaceKind,
    n: usize,
    dist: Vec<f64>,
    measure: Vec<f64>,
    neighbors: Vec<Vec<Neighbor>>,
    labels: Vec<Vec<f64>>,
    spacing: f64,
    length: f64,
    side: Option<usize>,
) -> FiniteMetricMeasureSpace {
    debug_assert_eq!(dist.len(), n * n);
    FiniteMetricMeasureSpace {
        n,
        dist,
        measure,
        neighbors,
        labels: Some(labels),
        weight: None,
        geometry: Geometry {
            kind,
            spacing: Some(spacing),
            length: Some(length),
            side,
        },
    }
}

/// Points `i·L/(n−1)`, trapezoid weights.
fn interval(n: usize, length: f64) -> FiniteMetricMeasureSpace {
    let dx = length / (n - 1) as f64;
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            dist[i * n + j] = i.abs_diff(j) as f64 * dx;
        }
    }
    let mut measure = vec![dx; n];
    measure[0] = 0.5 * dx;
    measure[n - 1] = 0.5 * dx;
    let neighbors = (0..n)
        .map(|i| {
            let mut v = Vec::with_capacity(2);
            if i > 0 {
                v.push(Neighbor {
                    index: i - 1,
                    length: dx,
                });
            }
            if i + 1 < n {
                v.push(Neighbor {
                    index: i + 1,
                    length: dx,
                });
            }
            v
        })
        .collect();
    let labels = (0..n).map(|i| vec![i as f64 * dx]).collect();
    grid_space(
        SpaceKind::Interval,
        n,
        dist,
        measure,
        neighbors,
        labels,
        dx,
        length,
        None,
    )
}

/// Points `i·L/n` on a circle of circumference `L`.
fn circle(n: usize, length: f64) -> FiniteMetricMeasureSpace {
    let dx = length / n as f64;
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let k = i.abs_diff(j);
            dist[i * n + j] = k.min(n - k) as f64 * dx;
        }
    }
    let neighbors = (0..n)
        .map(|i| {
            let mut v = vec![
                Neighbor {
                    index: (i + n - 1) % n,
                    length: dx,
                },
                Neighbor {
                    index: (i + 1) % n,
                    length: dx,
                },
            ];
            v.sort_by_key(|nb| nb.index);
            v.dedup_by_key(|nb| nb.index);
            v
        })
        .collect();
    let labels = (0..n).map(|i| vec![i as f64 * dx]).collect();
    grid_space(
        SpaceKind::Circle,
        n,
        dist,
        vec![dx; n],
        neighbors,
        labels,
        dx,
        length,
        None,
    )
}

/// `side × side` periodic grid, point `(r, c)` stored at index `r·side + c`,
/// with the graph (periodic ℓ¹) metric of the 4-neighbor stencil.
fn torus2d(side: usize, length: f64) -> FiniteMetricMeasureSpace {
    let dx = length / side as f64;
    let n = side * side;
    let ring = |a: usize, b: usize| {
        let k = a.abs_diff(b);
        k.min(side - k)
    };
    let mut dist = vec![0.0; n * n];
    for p in 0..n {
        let (pr, pc) = (p / side, p % side);
        for q in 0..n {
            let (qr, qc) = (q / side, q % side);
            dist[p * n + q] = (ring(pr, qr) + ring(pc, qc)) as f64 * dx;
        }
    }
    let neighbors = (0..n)
        .map(|p| {
            let (r, c) = (p / side, p % side);
            let mut v: Vec<Neighbor> = [
                ((r + side - 1) % side, c),
                ((r + 1) % side, c),
                (r, (c + side - 1) % side),
                (r, (c + 1) % side),
            ]
            .into_iter()
            .map(|(rr, cc)| Neighbor {
                index: rr * side + cc,
                length: dx,
            })
            .filter(|nb| nb.index != p)
            .collect();
            v.sort_by_key(|nb| nb.index);
            v.dedup_by_key(|nb| nb.index);
            v
        })
        .collect();
    let labels = (0..n)
        .map(|p| vec![(p / side) as f64 * dx, (p % side) as f64 * dx])
        .collect();
    grid_space(
        SpaceKind::Torus2d,
        n,
        dist,
        vec![dx * dx; n],
        neighbors,
        labels,
        dx,
        length,
        Some(side),
    )
}

/// Edges between points at Euclidean distance at most `radius`.
pub fn radius_edges(points: &[Vec<f64>], radius: f64) -> Vec<(usize, usize, f64)> {
    let mut edges = Vec::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = euclidean(&points[i], &points[j]);
            if d <= radius && d > 0.0 {
                edges.push((i, j, d));
            }
        }
    }
    edges
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn point_cloud(points: &[Vec<f64>], radius: f64) -> Result<FiniteMetricMeasureSpace> {
    let n = points.len();
    for i in 0..n {
        for j in i + 1..n {
            if euclidean(&points[i], &points[j]) == 0.0 {
                return Err(Error::InvalidSpec(format!("points {i} and {j} coincide")));
            }
        }
    }
    let edges = radius_edges(points, radius);
    let measure = vec![1.0 / n as f64; n];
    let mut space = FiniteMetricMeasureSpace::from_edges(n, &edges, measure)?;
    space.geometry.kind = SpaceKind::PointCloud;
    space.with_labels(points.to_vec())
}

/// Connected components of an undirected graph, each sorted, ordered by
/// smallest member.
pub fn connected_components(n: usize, edges: &[(usize, usize, f64)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(i, j, _) in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut seen = vec![false; n];
    let mut comps = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut comp = vec![s];
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    comp.push(v);
                    queue.push_back(v);
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}

/// All-pairs shortest-path distances of a weighted undirected graph,
/// row-major `n × n`.
pub fn metric_closure(edges: &[(usize, usize, f64)], n: usize) -> Result<Vec<f64>> {
    for &(i, j, w) in edges {
        if i >= n || j >= n {
            return Err(Error::InvalidArgument(format!(
                "edge ({i}, {j}) out of range for {n} nodes"
            )));
        }
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "edge ({i}, {j}) has non-positive weight {w}"
            )));
        }
    }
    let comps = connected_components(n, edges);
    if comps.len() > 1 {
        return Err(Error::Disconnected { components: comps });
    }
    if n <= FLOYD_WARSHALL_MAX {
        Ok(floyd_warshall(edges, n))
    } else {
        Ok(dijkstra_all(edges, n))
    }
}

/// The edges whose length equals the shortest-path distance between their
/// endpoints; longer edges are shortcut by some path and are dropped.
pub fn geodesic_edges(edges: &[(usize, usize, f64)], n: usize) -> Result<Vec<(usize, usize, f64)>> {
    let dist = metric_closure(edges, n)?;
    Ok(edges
        .iter()
        .copied()
        .filter(|&(i, j, w)| w <= dist[i * n + j] * (1.0 + METRIC_TOL))
        .collect())
}

fn floyd_warshall(edges: &[(usize, usize, f64)], n: usize) -> Vec<f64> {
    let mut d = vec![f64::INFINITY; n * n];
    for i in 0..n {
        d[i * n + i] = 0.0;
    }
    for &(i, j, w) in edges {
        if i != j && w < d[i * n + j] {
            d[i * n + j] = w;
            d[j * n + i] = w;
        }
    }
    for k in 0..n {
        for i in 0..n {
            let dik = d[i * n + k];
            if !dik.is_finite() {
                continue;
            }
            for j in 0..n {
                let cand = dik + d[k * n + j];
                if cand < d[i * n + j] {
                    d[i * n + j] = cand;
                }
            }
        }
    }
    // Symmetrize rounding differences between the two relaxation orders.
    for i in 0..n {
        for j in i + 1..n {
            let v = d[i * n + j].min(d[j * n + i]);
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

fn dijkstra_all(edges: &[(usize, usize, f64)], n: usize) -> Vec<f64> {
    let mut adj = vec![Vec::new(); n];
    for &(i, j, w) in edges {
        adj[i].push((j, w));
        adj[j].push((i, w));
    }
    let mut d = vec![f64::INFINITY; n * n];
    for s in 0..n {
        let row = &mut d[s * n..(s + 1) * n];
        row[s] = 0.0;
        let mut heap = BinaryHeap::from([HeapItem(0.0, s)]);
        while let Some(HeapItem(du, u)) = heap.pop() {
            if du > row[u] {
                continue;
            }
            for &(v, w) in &adj[u] {
                let cand = du + w;
                if cand < row[v] {
                    row[v] = cand;
                    heap.push(HeapItem(cand, v));
                }
            }
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let v = d[i * n + j].min(d[j * n + i]);
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// One violated invariant with its worst offender.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "invariant", rename_all = "snake_case")]
pub enum SpaceIssue {
    Shape {
        expected: usize,
        got: usize,
    },
    NonFinite {
        count: usize,
        i: usize,
        j: usize,
    },
    Asymmetric {
        count: usize,
        i: usize,
        j: usize,
        difference: f64,
    },
    NonZeroDiagonal {
        count: usize,
        i: usize,
        value: f64,
    },
    NonPositiveDistance {
        count: usize,
        i: usize,
        j: usize,
        value: f64,
    },
    Triangle {
        count: usize,
        i: usize,
        j: usize,
        k: usize,
        slack: f64,
    },
    NonPositiveMeasure {
        count: usize,
        i: usize,
        value: f64,
    },
    EdgeLength {
        count: usize,
        i: usize,
        j: usize,
        declared: f64,
        distance: f64,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<SpaceIssue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.issues.is_empty() {
            return write!(f, "no violations");
        }
        for (k, issue) in self.issues.iter().enumerate() {
            if k > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{issue:?}")?;
        }
        Ok(())
    }
}

/// Tracks the count and the worst instance of one kind of violation.
struct Worst<T> {
    count: usize,
    worst: Option<(f64, T)>,
}

impl<T> Worst<T> {
    fn new() -> Self {
        Self {
            count: 0,
            worst: None,
        }
    }

    fn add(&mut self, severity: f64, item: T) {
        self.count += 1;
        if self.worst.as_ref().is_none_or(|(s, _)| severity > *s) {
            self.worst = Some((severity, item));
        }
    }
}

/// Checks every space invariant and reports the worst offender of each.
pub fn validate_space(space: &FiniteMetricMeasureSpace) -> ValidationReport {
    let n = space.n;
    let mut issues = Vec::new();
    if space.dist.len() != n * n {
        issues.push(SpaceIssue::Shape {
            expected: n * n,
            got: space.dist.len(),
        });
        return ValidationReport { issues };
    }
    let d = |i: usize, j: usize| space.dist[i * n + j];

    let mut non_finite = Worst::new();
    let mut asym = Worst::new();
    let mut diag = Worst::new();
    let mut nonpos = Worst::new();
    for i in 0..n {
        if d(i, i) != 0.0 {
            diag.add(d(i, i).abs(), (i, d(i, i)));
        }
        for j in 0..n {
            let v = d(i, j);
            if !v.is_finite() {
                non_finite.add(1.0, (i, j));
                continue;
            }
            if i != j && !(v > 0.0) {
                nonpos.add(-v, (i, j, v));
            }
            if j > i {
                let diff = (v - d(j, i)).abs();
                if diff > METRIC_TOL * v.abs().max(d(j, i).abs()) {
                    asym.add(diff, (i, j, diff));
                }
            }
        }
    }
    if let Some((_, (i, j))) = non_finite.worst {
        issues.push(SpaceIssue::NonFinite {
            count: non_finite.count,
            i,
            j,
        });
    }
    if let Some((_, (i, j, difference))) = asym.worst {
        issues.push(SpaceIssue::Asymmetric {
            count: asym.count,
            i,
            j,
            difference,
        });
    }
    if let Some((_, (i, value))) = diag.worst {
        issues.push(SpaceIssue::NonZeroDiagonal {
            count: diag.count,
            i,
            value,
        });
    }
    if let Some((_, (i, j, value))) = nonpos.worst {
        issues.push(SpaceIssue::NonPositiveDistance {
            count: nonpos.count,
            i,
            j,
            value,
        });
    }

    let mut tri = Worst::new();
    if non_finite.count == 0 {
        for i in 0..n {
            for j in 0..n {
                let dij = d(i, j);
                for k in 0..n {
                    let slack = d(i, k) - dij - d(j, k);
                    if slack > METRIC_TOL * d(i, k).max(dij + d(j, k)).max(f64::MIN_POSITIVE) {
                        tri.add(slack, (i, j, k, slack));
                    }
                }
            }
        }
    }
    if let Some((_, (i, j, k, slack))) = tri.worst {
        issues.push(SpaceIssue::Triangle {
            count: tri.count,
            i,
            j,
            k,
            slack,
        });
    }

    let mut meas = Worst::new();
    for (i, &m) in space.measure.iter().enumerate() {
        if !(m > 0.0) || !m.is_finite() {
            meas.add(if m.is_finite() { -m } else { f64::INFINITY }, (i, m));
        }
    }
    if let Some((_, (i, value))) = meas.worst {
        issues.push(SpaceIssue::NonPositiveMeasure {
            count: meas.count,
            i,
            value,
        });
    }

    let mut edge = Worst::new();
    for (i, nbrs) in space.neighbors.iter().enumerate() {
        for nb in nbrs {
            if nb.index >= n {
                edge.add(f64::INFINITY, (i, nb.index, nb.length, f64::NAN));
                continue;
            }
            let dist = d(i, nb.index);
            let diff = (dist - nb.length).abs();
            if !(diff <= METRIC_TOL * dist.max(nb.length)) {
                edge.add(diff, (i, nb.index, nb.length, dist));
            }
        }
    }
    if let Some((_, (i, j, declared, distance))) = edge.worst {
        issues.push(SpaceIssue::EdgeLength {
            count: edge.count,
            i,
            j,
            declared,
            distance,
        });
    }
    ValidationReport { issues }
}

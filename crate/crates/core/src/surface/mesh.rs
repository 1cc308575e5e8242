//! Surface mesh as a weighted vertex graph, its text format, and graph geodesics.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    positions: Vec<Vec<f64>>,
    edges: Vec<(usize, usize, f64)>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl Mesh {
    /// Builds a mesh, rejecting self-loops, non-positive lengths, mixed
    /// coordinate dimensions and disconnected graphs.
    pub fn new(positions: Vec<Vec<f64>>, edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        let v = positions.len();
        if v < 2 {
            return Err(invalid(format!("mesh needs at least 2 vertices, got {v}")));
        }
        let dim = positions[0].len();
        if !(2..=3).contains(&dim) {
            return Err(invalid(format!("vertex coordinates must be 2D or 3D, got {dim}D")));
        }
        for (i, p) in positions.iter().enumerate() {
            if p.len() != dim {
                return Err(invalid(format!("vertex {i} has {} coordinates, expected {dim}", p.len())));
            }
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFinite(format!("vertex {i} position")));
            }
        }
        let mut adjacency = vec![Vec::new(); v];
        for (k, &(i, j, len)) in edges.iter().enumerate() {
            if i >= v || j >= v {
                return Err(invalid(format!("edge {k} ({i}, {j}) references a missing vertex")));
            }
            if i == j {
                return Err(invalid(format!("edge {k} is a self-loop on vertex {i}")));
            }
            if !(len.is_finite() && len > 0.0) {
                return Err(invalid(format!("edge {k} has non-positive length {len}")));
            }
            adjacency[i].push((j, len));
            adjacency[j].push((i, len));
        }
        let mesh = Mesh {
            positions,
            edges,
            adjacency,
        };
        if !mesh.is_connected() {
            return Err(invalid("mesh graph is not connected"));
        }
        Ok(mesh)
    }

    /// Closed polygon of `vertices` points on the unit circle, vertex `k` at
    /// angle `2*pi*k / vertices`, with chord-length edges.
    pub fn circle(vertices: usize) -> Result<Self> {
        if vertices < 3 {
            return Err(invalid("a closed contour needs at least 3 vertices"));
        }
        let step = std::f64::consts::TAU / vertices as f64;
        let positions = (0..vertices)
            .map(|k| {
                let a = step * k as f64;
                vec![a.cos(), a.sin()]
            })
            .collect();
        let chord = 2.0 * (0.5 * step).sin();
        let edges = (0..vertices).map(|k| (k, (k + 1) % vertices, chord)).collect();
        Mesh::new(positions, edges)
    }

    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[Vec<f64>] {
        &self.positions
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.adjacency[v]
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.vertex_count()];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &(w, _) in &self.adjacency[u] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Parses `mesh V E`, then `V` coordinate lines, then `E` lines `i j length`.
    /// Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(n, l)| (n + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let fmt = |line: usize, message: String| Error::Format { line, message };

        let (hline, header) = lines.next().ok_or_else(|| fmt(1, "empty mesh file".into()))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != "mesh" {
            return Err(fmt(hline, format!("expected `mesh V E`, got `{header}`")));
        }
        let count = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| fmt(hline, format!("bad count `{s}`: {e}")))
        };
        let (nv, ne) = (count(parts[1])?, count(parts[2])?);

        let mut positions = Vec::with_capacity(nv);
        for k in 0..nv {
            let (n, l) = lines
                .next()
                .ok_or_else(|| fmt(hline, format!("expected {nv} vertex lines, found {k}")))?;
            let coords = l
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| fmt(n, format!("bad coordinate `{t}`: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            positions.push(coords);
        }
        let mut edges = Vec::with_capacity(ne);
        for k in 0..ne {
            let (n, l) = lines
                .next()
                .ok_or_else(|| fmt(hline, format!("expected {ne} edge lines, found {k}")))?;
            let t: Vec<&str> = l.split_whitespace().collect();
            if t.len() != 3 {
                return Err(fmt(n, format!("expected `i j length`, got `{l}`")));
            }
            let idx = |s: &str| s.parse::<usize>().map_err(|e| fmt(n, format!("bad index `{s}`: {e}")));
            let len = t[2]
                .parse::<f64>()
                .map_err(|e| fmt(n, format!("bad length `{}`: {e}", t[2])))?;
            edges.push((idx(t[0])?, idx(t[1])?, len));
        }
        if let Some((n, l)) = lines.next() {
            return Err(fmt(n, format!("trailing content after {ne} edges: `{l}`")));
        }
        Mesh::new(positions, edges)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("mesh {} {}\n", self.vertex_count(), self.edges.len());
        for p in &self.positions {
            let coords: Vec<String> = p.iter().map(|c| format!("{c:?}")).collect();
            s.push_str(&coords.join(" "));
            s.push('\n');
        }
        for &(i, j, len) in &self.edges {
            let _ = writeln!(s, "{i} {j} {len:?}");
        }
        s
    }
}

#[derive(Debug, Clone, Copy)]
struct Frontier {
    dist: f64,
    vertex: usize,
}

impl PartialEq for Frontier {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Frontier {}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Frontier {
    // reversed for a min-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

/// Single-source shortest-path distances along mesh edges (Dijkstra).
pub fn geodesic_distances(mesh: &Mesh, source: usize) -> Result<Vec<f64>> {
    let v = mesh.vertex_count();
    if source >= v {
        return Err(invalid(format!("source vertex {source} out of range for {v} vertices")));
    }
    let mut dist = vec![f64::INFINITY; v];
    let mut done = vec![false; v];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Frontier {
        dist: 0.0,
        vertex: source,
    });
    while let Some(Frontier { dist: d, vertex: u }) = heap.pop() {
        if done[u] {
            continue;
        }
        done[u] = true;
        for &(w, len) in mesh.neighbors(u) {
            let nd = d + len;
            if nd < dist[w] {
                dist[w] = nd;
                heap.push(Frontier { dist: nd, vertex: w });
            }
        }
    }
    Ok(dist)
}

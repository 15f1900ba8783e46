//! Regular-grid spatial partitioning, neighborhood sets and boundary probes.

use std::io::Write;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::Scalar;

/// Axis-aligned bounding box.
#[derive(Clone, Debug, PartialEq)]
pub struct BBox<T> {
    pub lo: Vec<T>,
    pub hi: Vec<T>,
}

impl<T: Scalar> BBox<T> {
    /// Tight box around the rows of `coords`; `None` when there are none.
    pub fn of_points(coords: &Matrix<T>) -> Option<Self> {
        if coords.rows() == 0 {
            return None;
        }
        let d = coords.cols();
        let mut lo = vec![T::infinity(); d];
        let mut hi = vec![T::neg_infinity(); d];
        for i in 0..coords.rows() {
            for (j, &v) in coords.row(i).iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        Some(BBox { lo, hi })
    }

    pub fn contains(&self, p: &[T]) -> bool {
        self.distance_to(p) == T::zero()
    }

    /// Euclidean distance from `p` to the box (zero inside).
    pub fn distance_to(&self, p: &[T]) -> T {
        let mut s = T::zero();
        for ((&v, &lo), &hi) in p.iter().zip(&self.lo).zip(&self.hi) {
            let gap = if v < lo {
                lo - v
            } else if v > hi {
                v - hi
            } else {
                T::zero()
            };
            s = s + gap * gap;
        }
        s.sqrt()
    }
}

/// One partition's observations.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionData<T> {
    pub id: usize,
    pub coords: Matrix<T>,
    pub responses: Vec<T>,
    pub bbox: BBox<T>,
}

impl<T: Scalar> PartitionData<T> {
    /// Partition whose box is the tight box of its points.
    pub fn new(id: usize, coords: Matrix<T>, responses: Vec<T>) -> Self {
        assert_eq!(coords.rows(), responses.len(), "coords/responses length mismatch");
        let bbox = BBox::of_points(&coords).unwrap_or(BBox {
            lo: vec![T::zero(); coords.cols()],
            hi: vec![T::zero(); coords.cols()],
        });
        PartitionData {
            id,
            coords,
            responses,
            bbox,
        }
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    /// Copies the selected rows, in the given order.
    pub fn rows(&self, indices: &[usize]) -> (Matrix<T>, Vec<T>) {
        let d = self.coords.cols();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut ys = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.coords.row(i));
            ys.push(self.responses[i]);
        }
        (Matrix::from_row_major(indices.len(), d, data), ys)
    }
}

/// An `nx × ny` tiling of the data bounding box; partition ids are row-major
/// (`id = iy·nx + ix`).
#[derive(Clone, Debug)]
pub struct GridPartition<T> {
    pub nx: usize,
    pub ny: usize,
    pub x_edges: Vec<T>,
    pub y_edges: Vec<T>,
    pub partitions: Vec<PartitionData<T>>,
}

impl<T: Scalar> GridPartition<T> {
    pub fn len(&self) -> usize {
        self.partitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partitions.is_empty()
    }

    pub fn cell_of(&self, id: usize) -> (usize, usize) {
        (id % self.nx, id / self.nx)
    }

    pub fn id_of(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn counts(&self) -> Vec<usize> {
        self.partitions.iter().map(|p| p.len()).collect()
    }

    pub fn total_points(&self) -> usize {
        self.partitions.iter().map(|p| p.len()).sum()
    }

    /// Partition id containing `p` under the same assignment rule used for the data.
    pub fn locate(&self, p: &[T]) -> usize {
        let ix = cell_index(p[0], &self.x_edges);
        let iy = cell_index(p[1], &self.y_edges);
        self.id_of(ix, iy)
    }

    /// Writes `id,ix,iy,xmin,xmax,ymin,ymax,count` per partition.
    pub fn write_manifest<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["id", "ix", "iy", "xmin", "xmax", "ymin", "ymax", "count"])?;
        for p in &self.partitions {
            let (ix, iy) = self.cell_of(p.id);
            out.write_record([
                p.id.to_string(),
                ix.to_string(),
                iy.to_string(),
                p.bbox.lo[0].as_f64().to_string(),
                p.bbox.hi[0].as_f64().to_string(),
                p.bbox.lo[1].as_f64().to_string(),
                p.bbox.hi[1].as_f64().to_string(),
                p.len().to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn edges<T: Scalar>(lo: T, hi: T, cells: usize) -> Vec<T> {
    let span = hi - lo;
    let mut e: Vec<T> = (0..cells)
        .map(|c| lo + span * T::of_usize(c) / T::of_usize(cells))
        .collect();
    e.push(hi);
    e
}

/// Cell `c` with `edges[c] ≤ v < edges[c+1]`; the last cell also takes its upper edge.
fn cell_index<T: Scalar>(v: T, edges: &[T]) -> usize {
    let cells = edges.len() - 1;
    let (lo, hi) = (edges[0], edges[cells]);
    if !(hi > lo) || v <= lo {
        return 0;
    }
    if v >= hi {
        return cells - 1;
    }
    let guess = ((v - lo) / (hi - lo) * T::of_usize(cells)).floor();
    let mut c = guess.to_usize().unwrap_or(0).min(cells - 1);
    while c > 0 && v < edges[c] {
        c -= 1;
    }
    while c + 1 < cells && v >= edges[c + 1] {
        c += 1;
    }
    c
}

/// Tiles the data bounding box with `nx × ny` equal cells and assigns every
/// point to exactly one of them. Empty cells are kept.
pub fn build_grid_partition<T: Scalar>(
    coords: &Matrix<T>,
    responses: &[T],
    nx: usize,
    ny: usize,
) -> Result<GridPartition<T>> {
    if nx == 0 || ny == 0 {
        return Err(Error::config("grid dimensions must be at least 1×1"));
    }
    if coords.cols() != 2 {
        return Err(Error::config(format!(
            "grid partitioning needs 2-d coordinates, got {}",
            coords.cols()
        )));
    }
    if coords.rows() != responses.len() {
        return Err(Error::config("coordinate and response counts differ"));
    }
    let bounds = BBox::of_points(coords).unwrap_or(BBox {
        lo: vec![T::zero(); 2],
        hi: vec![T::one(); 2],
    });
    let x_edges = edges(bounds.lo[0], bounds.hi[0], nx);
    let y_edges = edges(bounds.lo[1], bounds.hi[1], ny);

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); nx * ny];
    for i in 0..coords.rows() {
        let ix = cell_index(coords[(i, 0)], &x_edges);
        let iy = cell_index(coords[(i, 1)], &y_edges);
        members[iy * nx + ix].push(i);
    }
    let partitions = members
        .into_iter()
        .enumerate()
        .map(|(id, rows)| {
            let (ix, iy) = (id % nx, id / nx);
            let mut data = Vec::with_capacity(rows.len() * 2);
            let mut ys = Vec::with_capacity(rows.len());
            for &i in &rows {
                data.extend_from_slice(coords.row(i));
                ys.push(responses[i]);
            }
            PartitionData {
                id,
                coords: Matrix::from_row_major(rows.len(), 2, data),
                responses: ys,
                bbox: BBox {
                    lo: vec![x_edges[ix], y_edges[iy]],
                    hi: vec![x_edges[ix + 1], y_edges[iy + 1]],
                },
            }
        })
        .collect();
    Ok(GridPartition {
        nx,
        ny,
        x_edges,
        y_edges,
        partitions,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AdjacencyRule {
    /// Cells sharing an edge (4-neighborhood).
    #[default]
    Edge,
    /// Cells sharing an edge or a corner (8-neighborhood).
    EdgeAndCorner,
}

impl std::str::FromStr for AdjacencyRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edge" => Ok(AdjacencyRule::Edge),
            "edge+corner" | "corner" => Ok(AdjacencyRule::EdgeAndCorner),
            other => Err(Error::config(format!("unknown adjacency rule `{other}`"))),
        }
    }
}

impl std::fmt::Display for AdjacencyRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AdjacencyRule::Edge => "edge",
            AdjacencyRule::EdgeAndCorner => "edge+corner",
        })
    }
}

/// Symmetric, irreflexive partition adjacency plus per-partition counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborGraph {
    pub adjacency: Vec<Vec<usize>>,
    pub counts: Vec<usize>,
}

impl NeighborGraph {
    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn neighbors(&self, j: usize) -> &[usize] {
        &self.adjacency[j]
    }

    pub fn count(&self, j: usize) -> usize {
        self.counts[j]
    }

    pub fn directed_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    pub fn is_symmetric(&self) -> bool {
        self.adjacency
            .iter()
            .enumerate()
            .all(|(j, ns)| ns.iter().all(|&k| k != j && self.adjacency[k].binary_search(&j).is_ok()))
    }
}

/// Neighborhood sets over a grid. `wraparound` joins the first and last
/// columns (periodic longitude).
pub fn neighborhoods<T: Scalar>(grid: &GridPartition<T>, rule: AdjacencyRule, wraparound: bool) -> NeighborGraph {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut adjacency = vec![Vec::new(); nx * ny];
    for iy in 0..ny {
        for ix in 0..nx {
            let id = iy * nx + ix;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    if rule == AdjacencyRule::Edge && dx != 0 && dy != 0 {
                        continue;
                    }
                    let y = iy as i64 + dy;
                    if y < 0 || y >= ny as i64 {
                        continue;
                    }
                    let mut x = ix as i64 + dx;
                    if x < 0 || x >= nx as i64 {
                        if !wraparound {
                            continue;
                        }
                        x = x.rem_euclid(nx as i64);
                    }
                    let other = y as usize * nx + x as usize;
                    if other != id {
                        adjacency[id].push(other);
                    }
                }
            }
            adjacency[id].sort_unstable();
            adjacency[id].dedup();
        }
    }
    NeighborGraph {
        adjacency,
        counts: grid.counts(),
    }
}

/// A point on the boundary shared by partitions `a < b`. `point_a` and
/// `point_b` coincide except across a wraparound seam, where each side sees
/// the seam at its own edge.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryProbe<T> {
    pub a: usize,
    pub b: usize,
    pub point_a: Vec<T>,
    pub point_b: Vec<T>,
}

fn fractions<T: Scalar>(lo: T, hi: T, n: usize) -> impl Iterator<Item = T> {
    (0..n).map(move |i| {
        let f = (T::of_usize(i) + T::of(0.5)) / T::of_usize(n);
        lo + (hi - lo) * f
    })
}

/// Probes on the edge shared by `a` and `b`, or `None` if they share no edge.
/// The result depends only on the unordered pair.
pub fn probes_between<T: Scalar>(
    grid: &GridPartition<T>,
    a: usize,
    b: usize,
    per_segment: usize,
    wraparound: bool,
) -> Option<Vec<BoundaryProbe<T>>> {
    let (a, b) = (a.min(b), a.max(b));
    if a == b || b >= grid.len() {
        return None;
    }
    let (ax, ay) = grid.cell_of(a);
    let (bx, by) = grid.cell_of(b);
    let mk = |pa: Vec<T>, pb: Vec<T>| BoundaryProbe {
        a,
        b,
        point_a: pa,
        point_b: pb,
    };
    if ay == by && bx == ax + 1 {
        let x = grid.x_edges[bx];
        let (lo, hi) = (grid.y_edges[ay], grid.y_edges[ay + 1]);
        return Some(fractions(lo, hi, per_segment).map(|y| mk(vec![x, y], vec![x, y])).collect());
    }
    if ax == bx && by == ay + 1 {
        let y = grid.y_edges[by];
        let (lo, hi) = (grid.x_edges[ax], grid.x_edges[ax + 1]);
        return Some(fractions(lo, hi, per_segment).map(|x| mk(vec![x, y], vec![x, y])).collect());
    }
    if wraparound && grid.nx >= 3 && ay == by && ax == 0 && bx == grid.nx - 1 {
        let (x_a, x_b) = (grid.x_edges[0], grid.x_edges[grid.nx]);
        let (lo, hi) = (grid.y_edges[ay], grid.y_edges[ay + 1]);
        return Some(
            fractions(lo, hi, per_segment)
                .map(|y| mk(vec![x_a, y], vec![x_b, y]))
                .collect(),
        );
    }
    None
}

/// `per_segment` equally spaced probes on every shared edge, at fractions
/// `(i + ½)/per_segment` along it. Corner-only contacts carry no probes.
pub fn boundary_probes<T: Scalar>(
    grid: &GridPartition<T>,
    graph: &NeighborGraph,
    per_segment: usize,
    wraparound: bool,
) -> Result<Vec<BoundaryProbe<T>>> {
    if per_segment == 0 {
        return Err(Error::config("probes per edge must be at least 1"));
    }
    let mut out = Vec::new();
    for a in 0..graph.len() {
        for &b in graph.neighbors(a) {
            if b <= a {
                continue;
            }
            if let Some(mut probes) = probes_between(grid, a, b, per_segment, wraparound) {
                out.append(&mut probes);
            }
        }
    }
    Ok(out)
}

//! 4-connected grid environments.

use serde::{Deserialize, Serialize};

/// A cell of a [`GridGraph`], stored as its row-major index `y * width + x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Vertex(pub u32);

impl Vertex {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Undirected, unweighted grid graph. Cells are connected to their orthogonal
/// passable neighbours; staying in place is an action, not an edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridGraph {
    width: usize,
    height: usize,
    passable: Vec<bool>,
}

impl GridGraph {
    /// Builds a grid from a row-major passability mask.
    ///
    /// Panics if `passable.len() != width * height`.
    pub fn new(width: usize, height: usize, passable: Vec<bool>) -> Self {
        assert_eq!(passable.len(), width * height, "mask size does not match dimensions");
        Self { width, height, passable }
    }

    /// Obstacle-free `width x height` grid.
    pub fn open(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![true; width * height])
    }

    /// Parses rows of `.` (free) and `@` (blocked). Handy for tests and fixtures.
    pub fn from_rows(rows: &[&str]) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let mut passable = Vec::with_capacity(width * height);
        for row in rows {
            assert_eq!(row.len(), width, "ragged rows");
            passable.extend(row.bytes().map(|b| b == b'.'));
        }
        Self::new(width, height, passable)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_cells(&self) -> usize {
        self.passable.len()
    }

    pub fn vertex(&self, x: usize, y: usize) -> Option<Vertex> {
        (x < self.width && y < self.height).then(|| Vertex((y * self.width + x) as u32))
    }

    /// Column and row of `v`.
    pub fn coords(&self, v: Vertex) -> (usize, usize) {
        (v.index() % self.width, v.index() / self.width)
    }

    pub fn is_passable(&self, v: Vertex) -> bool {
        self.passable.get(v.index()).copied().unwrap_or(false)
    }

    pub fn passable_vertices(&self) -> impl Iterator<Item = Vertex> + '_ {
        self.passable
            .iter()
            .enumerate()
            .filter(|(_, &p)| p)
            .map(|(i, _)| Vertex(i as u32))
    }

    pub fn passable_count(&self) -> usize {
        self.passable.iter().filter(|&&p| p).count()
    }

    /// Passable orthogonal neighbours of `v`, in ascending vertex order.
    pub fn neighbors(&self, v: Vertex) -> impl Iterator<Item = Vertex> + '_ {
        self.moves(v).filter(move |&w| w != v)
    }

    /// Cells reachable in one timestep (neighbours plus `v` itself), ascending.
    pub fn moves(&self, v: Vertex) -> impl Iterator<Item = Vertex> + '_ {
        let (x, y) = self.coords(v);
        let w = self.width;
        let i = v.index();
        let candidates = [
            (y > 0).then(|| i - w),
            (x > 0).then(|| i - 1),
            Some(i),
            (x + 1 < w).then(|| i + 1),
            (y + 1 < self.height).then(|| i + w),
        ];
        candidates
            .into_iter()
            .flatten()
            .map(|j| Vertex(j as u32))
            .filter(move |&u| self.is_passable(u))
    }

    pub fn is_adjacent(&self, a: Vertex, b: Vertex) -> bool {
        let (ax, ay) = self.coords(a);
        let (bx, by) = self.coords(b);
        ax.abs_diff(bx) + ay.abs_diff(by) == 1
    }

    /// Manhattan distance between two cells.
    pub fn manhattan(&self, a: Vertex, b: Vertex) -> usize {
        let (ax, ay) = self.coords(a);
        let (bx, by) = self.coords(b);
        ax.abs_diff(bx) + ay.abs_diff(by)
    }

    /// True when every cell is passable.
    pub fn is_open(&self) -> bool {
        self.passable.iter().all(|&p| p)
    }
}

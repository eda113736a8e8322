use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pitch, yaw, Rotation};

/// Three rows of `views_per_row` perspectives. Row 0 looks down, row 1 is
/// horizontal, row 2 looks up; within a row the heading advances clockwise by
/// `heading_step` degrees per index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewGrid {
    pub views_per_row: usize,
    /// Elevation of rows 0, 1, 2 in degrees.
    pub elevations: [f64; 3],
    pub heading_step: f64,
}

impl Default for ViewGrid {
    fn default() -> Self {
        Self {
            views_per_row: 12,
            elevations: [-30.0, 0.0, 30.0],
            heading_step: 30.0,
        }
    }
}

impl ViewGrid {
    /// Grid with evenly spaced headings covering the full circle.
    pub fn with_views_per_row(views_per_row: usize) -> Result<Self> {
        let g = Self {
            views_per_row,
            elevations: [-30.0, 0.0, 30.0],
            heading_step: 360.0 / views_per_row.max(1) as f64,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.views_per_row == 0 {
            return Err(Error::invalid("grid needs at least one view per row"));
        }
        if !self.heading_step.is_finite() || self.elevations.iter().any(|e| !e.is_finite() || e.abs() >= 90.0) {
            return Err(Error::invalid("grid angles must be finite with |elevation| < 90"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        3 * self.views_per_row
    }

    pub fn is_empty(&self) -> bool {
        self.views_per_row == 0
    }

    pub fn row(&self, i: usize) -> usize {
        i / self.views_per_row
    }

    pub fn column(&self, i: usize) -> usize {
        i % self.views_per_row
    }

    pub fn index(&self, row: usize, column: usize) -> usize {
        row * self.views_per_row + column % self.views_per_row
    }

    pub fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.len() {
            return Err(Error::invalid(format!("perspective index {i} outside 0..{}", self.len())));
        }
        Ok(())
    }

    /// The same-column indices of the two other rows, in queue order.
    fn companions(&self, row: usize, column: usize) -> [usize; 2] {
        let rows = match row {
            0 => [1, 2],
            1 => [0, 2],
            _ => [1, 0],
        };
        rows.map(|r| self.index(r, column))
    }

    /// Indices directly above/below and left/right (with wraparound).
    pub fn adjacent(&self, i: usize) -> BTreeSet<usize> {
        let (row, col) = (self.row(i), self.column(i));
        let nh = self.views_per_row;
        let mut out = BTreeSet::new();
        if row > 0 {
            out.insert(self.index(row - 1, col));
        }
        if row < 2 {
            out.insert(self.index(row + 1, col));
        }
        if nh > 1 {
            out.insert(self.index(row, (col + 1) % nh));
            out.insert(self.index(row, (col + nh - 1) % nh));
        }
        out.remove(&i);
        out
    }

    pub fn are_adjacent(&self, a: usize, b: usize) -> bool {
        self.adjacent(a).contains(&b)
    }

    /// Every unordered adjacent pair `(a, b)` with `a < b`, row pairs first.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges = BTreeSet::new();
        for i in 0..self.len() {
            for j in self.adjacent(i) {
                edges.insert((i.min(j), i.max(j)));
            }
        }
        edges.into_iter().collect()
    }
}

/// Rotation taking perspective `i`'s camera coordinates into the viewpoint
/// frame (the frame of the heading-0 horizontal perspective).
pub fn grid_rotation(i: usize, grid: &ViewGrid) -> Result<Rotation> {
    grid.check_index(i)?;
    let heading = grid.column(i) as f64 * grid.heading_step;
    Ok(yaw(heading) * pitch(grid.elevations[grid.row(i)]))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraversalQueue {
    pub reference: usize,
    pub order: Vec<usize>,
}

/// Outpainting order starting at reference `r`: first `r`'s same-column
/// companions, then each following column clockwise as the same-row index
/// followed by its two companions. Always a permutation of every index but
/// `r`.
pub fn traversal_queue(r: usize, grid: &ViewGrid) -> Result<TraversalQueue> {
    grid.check_index(r)?;
    let (row, col) = (grid.row(r), grid.column(r));
    let nh = grid.views_per_row;
    let mut order = Vec::with_capacity(grid.len() - 1);
    order.extend(grid.companions(row, col));
    for step in 1..nh {
        let c = (col + step) % nh;
        order.push(grid.index(row, c));
        order.extend(grid.companions(row, c));
    }
    Ok(TraversalQueue { reference: r, order })
}

/// The queue exactly as the published pseudocode emits it, including the
/// reference itself and the re-appended reference column on the closing
/// iteration. Kept for comparison with [`traversal_queue`].
pub fn traversal_queue_as_printed(r: usize, grid: &ViewGrid) -> Result<Vec<usize>> {
    grid.check_index(r)?;
    let nh = grid.views_per_row;
    let row = grid.row(r);
    let mut q = Vec::new();
    for step in r..=r + nh {
        let i = step % nh + row * nh;
        match row {
            0 => q.extend([i + nh, i + 2 * nh]),
            1 => q.extend([i - nh, i + nh]),
            _ => q.extend([i - nh, i - 2 * nh]),
        }
        if step != r + nh {
            q.push((i + 1) % nh + row * nh);
        }
    }
    Ok(q)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborSet {
    pub target: usize,
    pub members: Vec<usize>,
}

/// Already-generated perspectives adjacent to `i` (above/below in the same
/// column, left/right in the same row with wraparound), in ascending order.
pub fn neighbor_set(i: usize, generated: &BTreeSet<usize>, r: usize, grid: &ViewGrid) -> Result<NeighborSet> {
    grid.check_index(i)?;
    grid.check_index(r)?;
    if generated.contains(&i) {
        return Err(Error::InvalidState(format!("perspective {i} is already generated")));
    }
    if !generated.contains(&r) {
        return Err(Error::InvalidState(format!("reference {r} has not been generated")));
    }
    let members: Vec<usize> = grid.adjacent(i).intersection(generated).copied().collect();
    if members.is_empty() {
        return Err(Error::InvalidState(format!(
            "perspective {i} has no generated neighbor; traversal order violated"
        )));
    }
    Ok(NeighborSet { target: i, members })
}

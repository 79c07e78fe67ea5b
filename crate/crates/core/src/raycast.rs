//! Exact grid traversal between two cell centers.
//!
//! Crossing order is decided with integer arithmetic, so a segment that
//! passes exactly through a cell corner steps diagonally and never visits
//! the two cells it only touches at that point.

use crate::grid::{Coord, ObstacleMask};

/// Cells whose interior the segment between the centers of `from` and `to`
/// passes through, in order, excluding both endpoint cells.
pub fn cells_between(from: Coord, to: Coord) -> CellsBetween {
    let dr = to.row as i64 - from.row as i64;
    let dc = to.col as i64 - from.col as i64;
    CellsBetween {
        row: from.row as i64,
        col: from.col as i64,
        to,
        step_r: dr.signum(),
        step_c: dc.signum(),
        span_r: dr.abs(),
        span_c: dc.abs(),
        k: 0,
        m: 0,
    }
}

#[derive(Clone, Debug)]
pub struct CellsBetween {
    row: i64,
    col: i64,
    to: Coord,
    step_r: i64,
    step_c: i64,
    span_r: i64,
    span_c: i64,
    /// Row and column boundaries crossed so far.
    k: i64,
    m: i64,
}

impl Iterator for CellsBetween {
    type Item = Coord;

    fn next(&mut self) -> Option<Coord> {
        let (ar, ac) = (self.span_r, self.span_c);
        if self.k == ar && self.m == ac {
            return None;
        }
        // Boundary crossings happen at t = (k + 1/2) / ar and (m + 1/2) / ac.
        let (row_step, col_step) = if self.k < ar && self.m < ac {
            let tr = (2 * self.k + 1) * ac;
            let tc = (2 * self.m + 1) * ar;
            (tr <= tc, tc <= tr)
        } else {
            (self.k < ar, self.m < ac)
        };
        if row_step {
            self.row += self.step_r;
            self.k += 1;
        }
        if col_step {
            self.col += self.step_c;
            self.m += 1;
        }
        let here = Coord::new(self.row as usize, self.col as usize);
        if here == self.to {
            None
        } else {
            Some(here)
        }
    }
}

/// Number of obstacle cells strictly between two cells.
pub fn blocked_between(mask: &ObstacleMask, from: Coord, to: Coord) -> usize {
    cells_between(from, to).filter(|&c| mask.is_blocked(c)).count()
}

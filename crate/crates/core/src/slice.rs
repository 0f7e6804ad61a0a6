//! Complex lines `t -> base + t · direction` and uniform cell grids on them.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ComplexPoint2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceSpec {
    pub base: ComplexPoint2,
    pub direction: ComplexPoint2,
    /// `Re t` range.
    pub re: (f64, f64),
    /// `Im t` range.
    pub im: (f64, f64),
    pub nx: usize,
    pub ny: usize,
}

impl SliceSpec {
    /// The vertical line `{x = x0}` parametrized by `y = t`, window `[-h, h]²`.
    pub fn vertical(x0: Complex64, half_width: f64, n: usize) -> Self {
        Self {
            base: ComplexPoint2::new(x0, Complex64::new(0.0, 0.0)),
            direction: ComplexPoint2::new(Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)),
            re: (-half_width, half_width),
            im: (-half_width, half_width),
            nx: n,
            ny: n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.direction.norm() == 0.0 {
            return Err(Error::arg("direction", "slice direction must be nonzero"));
        }
        if self.nx == 0 || self.ny == 0 {
            return Err(Error::arg("resolution", "grid must have at least one cell"));
        }
        if !(self.re.0 < self.re.1 && self.im.0 < self.im.1) {
            return Err(Error::arg("rectangle", "empty slice rectangle"));
        }
        Ok(())
    }

    #[inline]
    pub fn hx(&self) -> f64 {
        (self.re.1 - self.re.0) / self.nx as f64
    }

    #[inline]
    pub fn hy(&self) -> f64 {
        (self.im.1 - self.im.0) / self.ny as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.hx() * self.hy()
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Slice coordinate of the center of cell `(i, j)`; `i` runs along `Re t`.
    #[inline]
    pub fn t_at(&self, i: usize, j: usize) -> Complex64 {
        Complex64::new(
            self.re.0 + (i as f64 + 0.5) * self.hx(),
            self.im.0 + (j as f64 + 0.5) * self.hy(),
        )
    }

    #[inline]
    pub fn point(&self, t: Complex64) -> ComplexPoint2 {
        ComplexPoint2::new(self.base.x + t * self.direction.x, self.base.y + t * self.direction.y)
    }

    /// Cell centers in row-major order (`j` outer, `i` inner).
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
        (0..self.ny).flat_map(move |j| (0..self.nx).map(move |i| (i, j, self.t_at(i, j))))
    }
}

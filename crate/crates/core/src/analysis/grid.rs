use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Real, Result, Tensor};

/// `(rows, cols)` for `n` cells: `cols = ⌈√n⌉`, `rows = ⌈n / cols⌉`.
pub fn grid_layout(n: usize) -> (usize, usize) {
    if n == 0 {
        return (0, 0);
    }
    let mut cols = 1;
    while cols * cols < n {
        cols += 1;
    }
    (n.div_ceil(cols), cols)
}

/// Equally shaped `[C, H, W]` cells laid out row-major with one-pixel
/// separators.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid<T> {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<Tensor<T>>,
    pub separator: T,
}

impl<T: Real> ImageGrid<T> {
    pub fn new(rows: usize, cols: usize, cells: Vec<Tensor<T>>) -> Result<Self> {
        if rows * cols < cells.len() {
            return Err(Error::contract(
                "grid",
                format!("{} cells do not fit {rows}×{cols}", cells.len()),
            ));
        }
        if let Some(first) = cells.first() {
            if first.ndim() != 3 {
                return Err(Error::dim("grid", format!("cells must be [C,H,W], got {:?}", first.shape())));
            }
            if let Some(bad) = cells.iter().position(|c| c.shape() != first.shape()) {
                return Err(Error::dim(
                    "grid",
                    format!("cell {bad} has shape {:?}, expected {:?}", cells[bad].shape(), first.shape()),
                ));
            }
        }
        Ok(ImageGrid {
            rows,
            cols,
            cells,
            separator: T::one(),
        })
    }

    /// Square-ish layout from [`grid_layout`].
    pub fn square(cells: Vec<Tensor<T>>) -> Result<Self> {
        let (rows, cols) = grid_layout(cells.len());
        Self::new(rows, cols, cells)
    }

    /// `[C, H, W]` of one cell; `None` for an empty grid.
    pub fn cell_shape(&self) -> Option<[usize; 3]> {
        self.cells.first().map(|c| [c.shape()[0], c.shape()[1], c.shape()[2]])
    }

    /// Position of the top-left pixel of cell `(r, c)` in the rendered image.
    pub fn origin(&self, r: usize, c: usize) -> (usize, usize) {
        let [_, h, w] = self.cell_shape().unwrap_or([0, 0, 0]);
        (r * (h + 1), c * (w + 1))
    }

    /// One `[C, rows·(H+1)−1, cols·(W+1)−1]` image. Unused slots are zero.
    pub fn render(&self) -> Tensor<T> {
        let Some([ch, h, w]) = self.cell_shape() else {
            return Tensor::zeros([1, 0, 0]);
        };
        let (gh, gw) = (self.rows * (h + 1) - 1, self.cols * (w + 1) - 1);
        let mut out = Tensor::full([ch, gh, gw], self.separator);
        for r in 0..self.rows {
            for c in 0..self.cols {
                let (y0, x0) = self.origin(r, c);
                let cell = self.cells.get(r * self.cols + c);
                let data = out.data_mut();
                for k in 0..ch {
                    for y in 0..h {
                        for x in 0..w {
                            data[(k * gh + y0 + y) * gw + x0 + x] =
                                cell.map_or(T::zero(), |t| t.data()[(k * h + y) * w + x]);
                        }
                    }
                }
            }
        }
        out
    }

    /// Copies cell `(r, c)` back out of a rendered image.
    pub fn extract(&self, rendered: &Tensor<T>, r: usize, c: usize) -> Tensor<T> {
        let [ch, h, w] = self.cell_shape().expect("non-empty grid");
        let (y0, x0) = self.origin(r, c);
        let gw = rendered.shape()[2];
        let gh = rendered.shape()[1];
        Tensor::from_fn([ch, h, w], |i| {
            let (k, y, x) = (i / (h * w), (i / w) % h, i % w);
            rendered.data()[(k * gh + y0 + y) * gw + x0 + x]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn layouts() {
        assert_eq!(grid_layout(100), (10, 10));
        assert_eq!(grid_layout(1), (1, 1));
        assert_eq!(grid_layout(11), (3, 4));
        assert_eq!(grid_layout(0), (0, 0));
    }

    #[test]
    fn render_and_extract() {
        let cells: Vec<Tensor<f32>> = (0..5).map(|k| Tensor::full([1, 2, 3], k as f32 / 10.0)).collect();
        let grid = ImageGrid::square(cells.clone()).unwrap();
        assert_eq!((grid.rows, grid.cols), (2, 3));
        let img = grid.render();
        assert_eq!(img.shape(), &[1, 5, 11]);
        assert_eq!(grid.extract(&img, 1, 1), cells[4]);
        assert_eq!(grid.extract(&img, 0, 2), cells[2]);
        assert!(grid.extract(&img, 1, 2).data().iter().all(|&x| x == 0.0));
        // separators
        assert_eq!(img.at(&[0, 2, 0]), 1.0);
        assert_eq!(img.at(&[0, 0, 3]), 1.0);
    }

    #[test]
    fn rejects_bad_cells() {
        let a = Tensor::<f32>::zeros([1, 2, 2]);
        let b = Tensor::<f32>::zeros([1, 3, 2]);
        assert!(ImageGrid::new(1, 2, vec![a.clone(), b]).is_err());
        assert!(ImageGrid::new(1, 1, vec![a.clone(), a]).is_err());
    }
}

use crate::autodiff::Value;

/// Pixel-center coordinates `(y, x)` mapped affinely onto `[0, 1]^2`; the
/// first pixel lands on 0 and the last on exactly 1.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordGrid {
    pub rows: usize,
    pub cols: usize,
    pub coords: Vec<[f64; 2]>,
}

fn unit(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        i as f64 / (n - 1) as f64
    }
}

impl CoordGrid {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut coords = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                coords.push([unit(r, rows), unit(c, cols)]);
            }
        }
        Self { rows, cols, coords }
    }

    pub fn from_points(coords: Vec<[f64; 2]>) -> Self {
        Self {
            rows: coords.len(),
            cols: 1,
            coords,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// `[n, 2]` real tensor, columns `(y, x)`.
    pub fn to_value(&self) -> Value {
        let data = self.coords.iter().flat_map(|c| [c[0], c[1]]).collect();
        Value::real(vec![self.coords.len(), 2], data).expect("coordinate tensor shape")
    }
}

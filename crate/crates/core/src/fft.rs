//! Centered, orthonormal 2D Fourier transforms.
//!
//! `forward = fftshift ∘ DFT ∘ ifftshift`, scaled by `1/sqrt(rows*cols)`, so
//! the zero frequency sits at index `(rows/2, cols/2)` and the inverse is
//! also the adjoint.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::field::ComplexField;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Plans for one `rows x cols` frame shape.
pub struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl Fft2 {
    fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::<f64>::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
            scale: 1.0 / ((rows * cols) as f64).sqrt(),
        }
    }

    /// Cached plan for the given shape.
    pub fn for_shape(rows: usize, cols: usize) -> Arc<Fft2> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Fft2>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
        guard
            .entry((rows, cols))
            .or_insert_with(|| Arc::new(Fft2::new(rows, cols)))
            .clone()
    }

    /// Transforms every consecutive `rows*cols` frame of `data` in place.
    pub fn process_frames(&self, data: &mut [Complex64], dir: Direction) {
        let n = self.rows * self.cols;
        assert_eq!(data.len() % n, 0, "buffer is not a whole number of frames");
        let (row_plan, col_plan) = match dir {
            Direction::Forward => (&self.row_fwd, &self.col_fwd),
            Direction::Inverse => (&self.row_inv, &self.col_inv),
        };
        let zero = Complex64::new(0.0, 0.0);
        let mut work = vec![zero; n];
        let mut transposed = vec![zero; n];
        let scratch_len = row_plan
            .get_inplace_scratch_len()
            .max(col_plan.get_inplace_scratch_len());
        let mut scratch = vec![zero; scratch_len];
        let (h, w) = (self.rows, self.cols);
        let (hh, hw) = (h / 2, w / 2);
        for frame in data.chunks_exact_mut(n) {
            // ifftshift
            for r in 0..h {
                let sr = (r + hh) % h;
                for c in 0..w {
                    work[r * w + c] = frame[sr * w + (c + hw) % w];
                }
            }
            row_plan.process_with_scratch(&mut work, &mut scratch[..row_plan.get_inplace_scratch_len()]);
            for r in 0..h {
                for c in 0..w {
                    transposed[c * h + r] = work[r * w + c];
                }
            }
            col_plan.process_with_scratch(
                &mut transposed,
                &mut scratch[..col_plan.get_inplace_scratch_len()],
            );
            // fftshift
            for r in 0..h {
                let dr = (r + hh) % h;
                for c in 0..w {
                    frame[dr * w + (c + hw) % w] = transposed[c * h + r] * self.scale;
                }
            }
        }
    }
}

fn transform(f: &ComplexField, dir: Direction) -> Result<ComplexField> {
    f.ensure_finite()?;
    let plan = Fft2::for_shape(f.rows(), f.cols());
    let mut out = f.clone();
    plan.process_frames(out.data_mut(), dir);
    if !out.is_finite() {
        return Err(Error::NonFiniteField);
    }
    Ok(out)
}

/// Orthonormal 2D DFT with the zero frequency at the array center.
pub fn cfft2_centered(f: &ComplexField) -> Result<ComplexField> {
    transform(f, Direction::Forward)
}

/// Inverse (and adjoint) of [`cfft2_centered`].
pub fn cifft2_centered(f: &ComplexField) -> Result<ComplexField> {
    transform(f, Direction::Inverse)
}

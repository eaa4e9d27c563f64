//! Dense 2D fields.
//!
//! [`ComplexField`] holds objects, probes and wavefields. Storage is row-major
//! `Complex64`, which is laid out as interleaved `(re, im)` pairs of `f64`.

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexField {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexField {
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape(format!("field must be non-empty, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{rows}x{cols} field needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, Complex64::new(0.0, 0.0))
    }

    pub fn filled(rows: usize, cols: usize, value: Complex64) -> Self {
        assert!(rows > 0 && cols > 0, "field must be non-empty");
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        assert!(rows > 0 && cols > 0, "field must be non-empty");
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds `amplitude * exp(i * phase)` pixelwise.
    pub fn from_polar(rows: usize, cols: usize, amplitude: &[f64], phase: &[f64]) -> Result<Self> {
        if amplitude.len() != rows * cols || phase.len() != rows * cols {
            return Err(Error::shape("amplitude/phase length does not match field shape"));
        }
        let data = amplitude
            .iter()
            .zip(phase)
            .map(|(&a, &p)| Complex64::from_polar(a, p))
            .collect();
        Self::new(rows, cols, data)
    }

    /// Builds a field from interleaved `(re, im)` pairs.
    pub fn from_interleaved(rows: usize, cols: usize, pairs: &[f64]) -> Result<Self> {
        if pairs.len() != 2 * rows * cols {
            return Err(Error::shape(format!(
                "{rows}x{cols} field needs {} interleaved values, got {}",
                2 * rows * cols,
                pairs.len()
            )));
        }
        let data = pairs
            .chunks_exact(2)
            .map(|p| Complex64::new(p[0], p[1]))
            .collect();
        Self::new(rows, cols, data)
    }

    pub fn to_interleaved(&self) -> Vec<f64> {
        self.data.iter().flat_map(|z| [z.re, z.im]).collect()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: Complex64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn ensure_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFiniteField)
        }
    }

    pub fn amplitude(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.norm()).collect()
    }

    pub fn phase(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.arg()).collect()
    }

    pub fn intensity(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.norm_sqr()).collect()
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn max_amplitude(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| z * s).collect(),
        }
    }

    /// Multiplies every pixel by `exp(i * theta)`.
    pub fn rotate_phase(&self, theta: f64) -> Self {
        self.scale(Complex64::from_polar(1.0, theta))
    }

    pub fn conj(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    /// Returns the `h x w` block whose top-left corner is at `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 || row + h > self.rows || col + w > self.cols {
            return Err(Error::OutOfBounds {
                row,
                col,
                h,
                w,
                rows: self.rows,
                cols: self.cols,
            });
        }
        let mut data = Vec::with_capacity(h * w);
        for r in row..row + h {
            let start = r * self.cols + col;
            data.extend_from_slice(&self.data[start..start + w]);
        }
        Ok(Self { rows: h, cols: w, data })
    }

    /// Circularly shifts the field by `(dy, dx)` pixels.
    pub fn roll(&self, dy: isize, dx: isize) -> Self {
        let rows = self.rows as isize;
        let cols = self.cols as isize;
        Self::from_fn(self.rows, self.cols, |r, c| {
            let sr = (r as isize - dy).rem_euclid(rows) as usize;
            let sc = (c as isize - dx).rem_euclid(cols) as usize;
            self.get(sr, sc)
        })
    }
}

/// Real-valued image (intensities, amplitude or phase maps).
#[derive(Clone, Debug, PartialEq)]
pub struct RealImage {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl RealImage {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{rows}x{cols} image needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> Result<Self> {
        if row + h > self.rows || col + w > self.cols {
            return Err(Error::OutOfBounds {
                row,
                col,
                h,
                w,
                rows: self.rows,
                cols: self.cols,
            });
        }
        let mut data = Vec::with_capacity(h * w);
        for r in row..row + h {
            data.extend_from_slice(&self.data[r * self.cols + col..r * self.cols + col + w]);
        }
        Ok(Self { rows: h, cols: w, data })
    }
}

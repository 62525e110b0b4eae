use crate::error::{Error, Result};

/// Complex 1D signal stored as split real/imaginary planes.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSequence {
    re: Vec<f64>,
    im: Vec<f64>,
}

impl ComplexSequence {
    pub fn new(re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        if re.len() != im.len() {
            return Err(Error::dims(
                "complex_sequence",
                format!("re has {} values, im has {}", re.len(), im.len()),
            ));
        }
        if re.is_empty() {
            return Err(Error::Empty("complex sequence"));
        }
        Ok(ComplexSequence { re, im })
    }

    pub fn from_real(re: &[f64]) -> Result<Self> {
        ComplexSequence::new(re.to_vec(), vec![0.0; re.len()])
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>) {
        (self.re, self.im)
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.re, &mut self.im)
    }

    pub fn energy(&self) -> f64 {
        self.re.iter().zip(&self.im).map(|(a, b)| a * a + b * b).sum()
    }

    /// Largest `|self_k - other_k|` relative to the largest magnitude in `other`
    /// (or 1, whichever is bigger).
    pub fn relative_error(&self, other: &ComplexSequence) -> f64 {
        let scale = other
            .re
            .iter()
            .zip(&other.im)
            .map(|(a, b)| a.hypot(*b))
            .fold(1.0, f64::max);
        let diff = self
            .re
            .iter()
            .zip(&self.im)
            .zip(other.re.iter().zip(&other.im))
            .map(|((a, b), (c, d))| (a - c).hypot(b - d))
            .fold(0.0, f64::max);
        diff / scale
    }
}

/// Complex `rows × cols` grid (sequence positions × hidden features).
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGrid {
    rows: usize,
    cols: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl ComplexGrid {
    pub fn new(rows: usize, cols: usize, re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        if re.len() != rows * cols || im.len() != rows * cols {
            return Err(Error::dims(
                "complex_grid",
                format!("{rows}×{cols} grid with planes {} / {}", re.len(), im.len()),
            ));
        }
        Ok(ComplexGrid { rows, cols, re, im })
    }

    pub fn from_real(rows: usize, cols: usize, re: &[f64]) -> Result<Self> {
        ComplexGrid::new(rows, cols, re.to_vec(), vec![0.0; re.len()])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    pub(crate) fn planes_mut(&mut self) -> (&mut Vec<f64>, &mut Vec<f64>) {
        (&mut self.re, &mut self.im)
    }

    pub fn into_real(self) -> Vec<f64> {
        self.re
    }
}

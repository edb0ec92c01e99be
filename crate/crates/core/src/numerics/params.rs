use std::collections::HashSet;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Initialization scheme for one named slice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    Zeros,
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` with fan-in = columns.
    FanInUniform,
    /// Orthonormal rows (or columns, whichever is shorter).
    Orthogonal,
    Constant(f64),
}

/// Location of a named slice inside the flat parameter vector.
///
/// Matrices are row-major `rows x cols`; vectors have `cols == 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub init: Init,
}

impl SliceInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Collects slice declarations; networks keep the returned [`Slot`]s.
#[derive(Debug, Default)]
pub struct ParamsBuilder {
    slices: Vec<SliceInfo>,
    len: usize,
}

impl ParamsBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn matrix(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        init: Init,
    ) -> Slot {
        let slot = Slot {
            offset: self.len,
            rows,
            cols,
        };
        self.slices.push(SliceInfo {
            name: name.into(),
            shape: vec![rows, cols],
            offset: self.len,
            init,
        });
        self.len += rows * cols;
        slot
    }

    pub fn vector(&mut self, name: impl Into<String>, len: usize, init: Init) -> Slot {
        let slot = Slot {
            offset: self.len,
            rows: len,
            cols: 1,
        };
        self.slices.push(SliceInfo {
            name: name.into(),
            shape: vec![len],
            offset: self.len,
            init,
        });
        self.len += len;
        slot
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Builds the store with every slice initialized per its [`Init`].
    pub fn build<R: Rng + ?Sized>(self, rng: &mut R) -> Result<ModelParams> {
        let mut params = self.build_zeros()?;
        for info in &params.slices {
            let data = &mut params.data[info.offset..info.offset + info.len()];
            initialize(data, &info.shape, info.init, rng);
        }
        Ok(params)
    }

    /// Builds the store with all entries zero, ignoring the init schemes.
    pub fn build_zeros(self) -> Result<ModelParams> {
        let mut seen = HashSet::new();
        for s in &self.slices {
            if !seen.insert(s.name.as_str()) {
                return Err(Error::invalid(format!(
                    "duplicate parameter name `{}`",
                    s.name
                )));
            }
        }
        Ok(ModelParams {
            data: vec![0.0; self.len],
            slices: self.slices,
        })
    }
}

fn initialize<R: Rng + ?Sized>(data: &mut [f64], shape: &[usize], init: Init, rng: &mut R) {
    match init {
        Init::Zeros => data.fill(0.0),
        Init::Constant(c) => data.fill(c),
        Init::FanInUniform => {
            let fan_in = if shape.len() == 2 { shape[1] } else { shape[0] };
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            for x in data.iter_mut() {
                *x = rng.random_range(-bound..bound);
            }
        }
        Init::Orthogonal => {
            let (rows, cols) = if shape.len() == 2 {
                (shape[0], shape[1])
            } else {
                (1, shape[0])
            };
            orthogonal(data, rows, cols, rng);
        }
    }
}

/// Fills a row-major matrix with orthonormal rows (rows <= cols) or
/// orthonormal columns (rows > cols) via Gram-Schmidt on Gaussian draws.
fn orthogonal<R: Rng + ?Sized>(data: &mut [f64], rows: usize, cols: usize, rng: &mut R) {
    let transpose = rows > cols;
    let (n, d) = if transpose {
        (cols, rows)
    } else {
        (rows, cols)
    };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    for (i, b) in basis.iter().enumerate() {
        for (j, &x) in b.iter().enumerate() {
            if transpose {
                data[j * cols + i] = x;
            } else {
                data[i * cols + j] = x;
            }
        }
    }
}

/// Flat parameter store with named, fixed-shape slices.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    slices: Vec<SliceInfo>,
    data: Vec<f64>,
}

impl ModelParams {
    pub fn from_parts(slices: Vec<SliceInfo>, data: Vec<f64>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut expected = 0;
        for s in &slices {
            if !seen.insert(s.name.as_str()) {
                return Err(Error::invalid(format!(
                    "duplicate parameter name `{}`",
                    s.name
                )));
            }
            if s.offset != expected {
                return Err(Error::invalid(format!(
                    "slice `{}` is not contiguous",
                    s.name
                )));
            }
            expected += s.len();
        }
        if expected != data.len() {
            return Err(Error::invalid(format!(
                "slices cover {expected} values but data has {}",
                data.len()
            )));
        }
        Ok(Self { slices, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn slices(&self) -> &[SliceInfo] {
        &self.slices
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.slices
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.data[s.offset..s.offset + s.len()])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let s = self.slices.iter().find(|s| s.name == name)?;
        let range = s.offset..s.offset + s.len();
        Some(&mut self.data[range])
    }

    /// Replaces every value; the length must match.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.data.len() {
            return Err(Error::invalid(format!(
                "flat vector has {} values, expected {}",
                flat.len(),
                self.data.len()
            )));
        }
        self.data.copy_from_slice(flat);
        Ok(())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.data.clone()
    }

    /// `self <- (1 - rate) * self + rate * other`
    pub fn polyak_from(&mut self, other: &ModelParams, rate: f64) {
        for (t, s) in self.data.iter_mut().zip(&other.data) {
            *t = (1.0 - rate) * *t + rate * s;
        }
    }
}

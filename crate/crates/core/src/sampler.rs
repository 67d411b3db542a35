//! Exact joint-Gaussian sampling of multi-component TFBM on dyadic grids.
//!
//! Random streams: replica `r`, component `c` of base seed `s` draws its standard
//! normals from `ChaCha20Rng::seed_from_u64(s)` with stream id `(r << 16) | c`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bessel::variance_function;
use crate::error::{domain, Error, Result};

pub const DEFAULT_MAX_LEVEL: u32 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DyadicGrid {
    pub level: u32,
    pub horizon: f64,
}

impl DyadicGrid {
    pub fn new(level: u32, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return domain(format!("grid horizon must be positive, got {horizon}"));
        }
        if level > 30 {
            return domain(format!("grid level {level} too large"));
        }
        Ok(Self { level, horizon })
    }

    pub fn unit(level: u32) -> Self {
        Self { level, horizon: 1.0 }
    }

    pub fn intervals(&self) -> usize {
        1usize << self.level
    }

    pub fn len(&self) -> usize {
        self.intervals() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn mesh(&self) -> f64 {
        self.horizon / self.intervals() as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.horizon * k as f64 / self.intervals() as f64
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }
}

/// Covariance of the process at the nonzero grid points t_1..t_N.
pub fn covariance_matrix(grid: &DyadicGrid, hurst: f64, lambda: f64) -> Result<DMatrix<f64>> {
    let n = grid.intervals();
    // V at every lag k·mesh; covariance only needs these N+1 values
    let lags: Vec<f64> = (0..=n)
        .into_par_iter()
        .map(|k| variance_function(hurst, lambda, grid.time(k)))
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(n, n, |i, j| {
        let (a, b) = (i + 1, j + 1);
        0.5 * (lags[a] + lags[b] - lags[a.abs_diff(b)])
    }))
}

/// Lower Cholesky factor of the grid covariance, shareable across replicas.
#[derive(Debug, Clone)]
pub struct CovarianceFactor {
    pub grid: DyadicGrid,
    pub hurst: f64,
    pub lambda: f64,
    pub ridge: f64,
    lower: DMatrix<f64>,
}

impl CovarianceFactor {
    pub fn new(grid: DyadicGrid, hurst: f64, lambda: f64) -> Result<Self> {
        Self::with_level_cap(grid, hurst, lambda, DEFAULT_MAX_LEVEL)
    }

    pub fn with_level_cap(grid: DyadicGrid, hurst: f64, lambda: f64, max_level: u32) -> Result<Self> {
        if grid.level > max_level {
            return domain(format!(
                "grid level {} exceeds the cap {max_level}; raise the cap explicitly",
                grid.level
            ));
        }
        let cov = covariance_matrix(&grid, hurst, lambda)?;
        let n = cov.nrows();
        if let Some(ch) = Cholesky::new(cov.clone()) {
            return Ok(Self { grid, hurst, lambda, ridge: 0.0, lower: ch.unpack() });
        }
        let ridge = 1e-12 * cov.trace() / n as f64;
        log::warn!("covariance not numerically positive definite at level {}; adding ridge {ridge:e}", grid.level);
        let mut reg = cov.clone();
        for i in 0..n {
            reg[(i, i)] += ridge;
        }
        match Cholesky::new(reg) {
            Some(ch) => Ok(Self { grid, hurst, lambda, ridge, lower: ch.unpack() }),
            None => {
                let min_eig = SymmetricEigen::new(cov).eigenvalues.min();
                Err(Error::Numeric(format!(
                    "Cholesky failed after ridge {ridge:e}; smallest eigenvalue estimate {min_eig:e}"
                )))
            }
        }
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    fn correlate(&self, z: &[f64], out: &mut [f64]) {
        let n = self.lower.nrows();
        out.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..n {
            let col = self.lower.column(j);
            let zj = z[j];
            for i in j..n {
                out[i] += col[i] * zj;
            }
        }
    }

    /// One d-component sample for the given replica index.
    pub fn sample(&self, dim: usize, seed: u64, replica: u64) -> Result<GaussianPathSample> {
        if dim == 0 {
            return domain("component count must be at least 1");
        }
        let n = self.grid.intervals();
        let mut values = vec![0.0; (n + 1) * dim];
        let mut z = vec![0.0; n];
        let mut col = vec![0.0; n];
        for c in 0..dim {
            let mut rng = component_rng(seed, replica, c);
            for v in z.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            self.correlate(&z, &mut col);
            for k in 0..n {
                values[(k + 1) * dim + c] = col[k];
            }
        }
        Ok(GaussianPathSample {
            grid: self.grid,
            hurst: self.hurst,
            lambda: self.lambda,
            dim,
            values,
            seed,
            replica,
        })
    }

    /// Replicas `first..first+count`, generated in parallel; order of the output is the replica order.
    pub fn sample_replicas(&self, dim: usize, seed: u64, first: u64, count: usize) -> Result<Vec<GaussianPathSample>> {
        (0..count as u64)
            .into_par_iter()
            .map(|r| self.sample(dim, seed, first + r))
            .collect()
    }
}

/// Random stream for one (replica, component) pair.
pub fn component_rng(seed: u64, replica: u64, component: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream((replica << 16) | component as u64);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPathSample {
    pub grid: DyadicGrid,
    pub hurst: f64,
    pub lambda: f64,
    pub dim: usize,
    /// Row-major (2^level + 1) × dim values.
    pub values: Vec<f64>,
    pub seed: u64,
    pub replica: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleMetadata {
    pub hurst: f64,
    pub lambda: f64,
    pub level: u32,
    pub horizon: f64,
    pub dim: usize,
    pub seed: u64,
    pub replica: u64,
    pub version: String,
}

impl GaussianPathSample {
    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn rows(&self) -> usize {
        self.grid.len()
    }

    /// Keeps every 2^{M-m}-th row.
    pub fn restrict(&self, level: u32) -> Result<Self> {
        if level > self.grid.level {
            return domain(format!("cannot restrict level {} sample to finer level {level}", self.grid.level));
        }
        let stride = 1usize << (self.grid.level - level);
        let grid = DyadicGrid { level, horizon: self.grid.horizon };
        let mut values = Vec::with_capacity(grid.len() * self.dim);
        for k in 0..grid.len() {
            values.extend_from_slice(self.row(k * stride));
        }
        Ok(Self { grid, values, ..self.clone() })
    }

    pub fn metadata(&self) -> SampleMetadata {
        SampleMetadata {
            hurst: self.hurst,
            lambda: self.lambda,
            level: self.grid.level,
            horizon: self.grid.horizon,
            dim: self.dim,
            seed: self.seed,
            replica: self.replica,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((0..self.dim).map(|c| format!("comp_{c}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.rows() {
            write!(w, "{}", self.grid.time(k))?;
            for v in self.row(k) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_sidecar(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.metadata())
            .map_err(|e| Error::Numeric(format!("metadata serialization: {e}")))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

pub fn sample_tfbm(grid: DyadicGrid, hurst: f64, lambda: f64, dim: usize, seed: u64) -> Result<GaussianPathSample> {
    CovarianceFactor::new(grid, hurst, lambda)?.sample(dim, seed, 0)
}

/// E(Δ^{m+1}_{2l} B · Δ^{m+1}_{2r} B) in the second-difference form
/// V(t+h) + V(t-h) - 2V(t), t = (2l-2r)/2^{m+1}, h = 1/2^{m+1}.
/// This is twice the covariance of the two increments; the diagonal gives 2V(h).
pub fn increment_covariance(hurst: f64, lambda: f64, m: u32, l: u64, r: u64) -> Result<f64> {
    if l == 0 || r == 0 {
        return domain("increment indices start at 1");
    }
    let h = 2f64.powi(-(m as i32 + 1));
    let t = 2.0 * (l as f64 - r as f64) * h;
    let v = |x: f64| variance_function(hurst, lambda, x.abs());
    Ok(v(t + h)? + v(t - h)? - 2.0 * v(t)?)
}

/// The diagonal bound 2 C^2_{2^{-m}} 2^{-2mH}.
pub fn increment_diagonal_bound(hurst: f64, lambda: f64, m: u32) -> Result<f64> {
    Ok(2.0 * variance_function(hurst, lambda, 2f64.powi(-(m as i32)))?)
}

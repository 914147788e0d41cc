//! Uniform centered grids and complex sample arrays.
//!
//! Every axis uses the centered convention t_j = (j − N/2)·h with h = 2L/N,
//! j = 0..N−1, so the sampled box is [−L, L) and the dual axis (see
//! [`crate::fourier`]) is again centered with spacing 2π/(N h) and extent π/h.

use crate::error::{Error, Result};
use ndarray::{ArrayD, IxDyn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

/// One grid axis: N evenly spaced points covering [−L, L).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "L")]
    pub extent: f64,
}

impl AxisSpec {
    pub fn new(n: usize, extent: f64) -> Result<Self> {
        if n == 0 || n % 2 != 0 {
            return Err(Error::InvalidInput(format!(
                "axis point count must be even and positive, got {n}"
            )));
        }
        if !(extent > 0.0) {
            return Err(Error::InvalidInput(format!(
                "axis extent must be positive, got {extent}"
            )));
        }
        Ok(AxisSpec { n, extent })
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.extent / self.n as f64
    }

    /// j-th point, t_j = (j − N/2)·h.
    pub fn coord(&self, j: usize) -> f64 {
        (j as f64 - self.n as f64 / 2.0) * self.spacing()
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.coord(j)).collect()
    }

    /// Dual axis under the centered DFT: spacing 2π/(N h), same point count.
    pub fn dual(&self) -> AxisSpec {
        let dk = 2.0 * std::f64::consts::PI / (self.n as f64 * self.spacing());
        AxisSpec {
            n: self.n,
            extent: dk * self.n as f64 / 2.0,
        }
    }

    /// Nyquist frequency π/h.
    pub fn nyquist(&self) -> f64 {
        std::f64::consts::PI / self.spacing()
    }
}

/// Tensor-product grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub axes: Vec<AxisSpec>,
}

impl Grid {
    pub fn new(axes: Vec<AxisSpec>) -> Self {
        Grid { axes }
    }

    /// Isotropic grid: `dim` axes with identical N and extent.
    pub fn isotropic(dim: usize, n: usize, extent: f64) -> Result<Self> {
        Ok(Grid::new(vec![AxisSpec::new(n, extent)?; dim]))
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.n).collect()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Volume element Π h_i.
    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(|a| a.spacing()).product()
    }

    pub fn point(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .zip(&self.axes)
            .map(|(&j, a)| a.coord(j))
            .collect()
    }

    /// Row-major iteration over all multi-indices.
    pub fn indices(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        let shape = self.shape();
        let total = self.len();
        (0..total).map(move |mut flat| {
            let mut idx = vec![0usize; shape.len()];
            for (k, &nk) in shape.iter().enumerate().rev() {
                idx[k] = flat % nk;
                flat /= nk;
            }
            idx
        })
    }

    pub fn dual(&self) -> Grid {
        Grid::new(self.axes.iter().map(|a| a.dual()).collect())
    }
}

/// Complex samples of a function on a [`Grid`].
#[derive(Debug, Clone)]
pub struct GridSymbol {
    pub grid: Grid,
    /// Phase-space parameter recorded for provenance; axes are authoritative.
    pub n: usize,
    /// Domain tag: "position", "E", or "ExEstar".
    pub domain: String,
    pub values: ArrayD<Complex64>,
}

impl GridSymbol {
    pub fn new(grid: Grid, n: usize, domain: &str, values: ArrayD<Complex64>) -> Result<Self> {
        if values.shape() != grid.shape().as_slice() {
            return Err(Error::DimensionMismatch(format!(
                "value shape {:?} does not match grid shape {:?}",
                values.shape(),
                grid.shape()
            )));
        }
        Ok(GridSymbol {
            grid,
            n,
            domain: domain.to_string(),
            values,
        })
    }

    /// Sample a closure at every grid point.
    pub fn sample<F>(grid: Grid, n: usize, domain: &str, f: F) -> Self
    where
        F: Fn(&[f64]) -> Complex64,
    {
        let shape = IxDyn(&grid.shape());
        let mut values = ArrayD::zeros(shape);
        for idx in grid.indices() {
            let p = grid.point(&idx);
            values[IxDyn(&idx)] = f(&p);
        }
        GridSymbol {
            grid,
            n,
            domain: domain.to_string(),
            values,
        }
    }

    pub fn zeros(grid: Grid, n: usize, domain: &str) -> Self {
        let shape = IxDyn(&grid.shape());
        GridSymbol {
            values: ArrayD::zeros(shape),
            grid,
            n,
            domain: domain.to_string(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Discrete L² norm, (Σ |v|² Π h)^{1/2}.
    pub fn l2_norm(&self) -> f64 {
        let s: f64 = self.values.iter().map(|z| z.norm_sqr()).sum();
        (s * self.grid.cell_volume()).sqrt()
    }

    /// Discrete L^p norm; `p = f64::INFINITY` gives the sup norm.
    pub fn lp_norm(&self, p: f64) -> f64 {
        if p.is_infinite() {
            self.max_abs()
        } else {
            let s: f64 = self.values.iter().map(|z| z.norm().powf(p)).sum();
            (s * self.grid.cell_volume()).powf(1.0 / p)
        }
    }

    /// Band-limited resampling onto a new grid of the same dimension.
    ///
    /// The samples are read as a trigonometric interpolant on the periodic
    /// box; values at the new coordinates are evaluated axis by axis. Target
    /// coordinates outside the source box wrap around, so callers should keep
    /// the data negligible near the boundary.
    pub fn resample_to(&self, target: &Grid) -> Result<GridSymbol> {
        if target.dim() != self.grid.dim() {
            return Err(Error::DimensionMismatch(format!(
                "resample from {}d to {}d grid",
                self.grid.dim(),
                target.dim()
            )));
        }
        let mut data = self.values.clone();
        for axis in 0..self.grid.dim() {
            data = crate::fourier::trig_resample_axis(&data, axis, &self.grid.axes[axis], &target.axes[axis]);
        }
        GridSymbol::new(target.clone(), self.n, &self.domain, data)
    }

    fn raw_companion(path: &Path) -> PathBuf {
        path.with_extension("raw")
    }

    /// Write the JSON header at `path` and the samples as interleaved
    /// little-endian f64 (re, im) pairs, row-major, in a `.raw` companion.
    pub fn write_to(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Header<'a> {
            n: usize,
            axes: &'a [AxisSpec],
            domain: &'a str,
        }
        let header = Header {
            n: self.n,
            axes: &self.grid.axes,
            domain: &self.domain,
        };
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, &header)?;
        f.write_all(b"\n")?;

        let mut raw = std::fs::File::create(Self::raw_companion(path))?;
        let mut buf = Vec::with_capacity(self.values.len() * 16);
        for z in self.values.iter() {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
        raw.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<GridSymbol> {
        #[derive(Deserialize)]
        struct Header {
            n: usize,
            axes: Vec<AxisSpec>,
            domain: String,
        }
        let header: Header = serde_json::from_reader(std::fs::File::open(path)?)?;
        let grid = Grid::new(header.axes);
        let mut raw = Vec::new();
        std::fs::File::open(Self::raw_companion(path))?.read_to_end(&mut raw)?;
        let expected = grid.len() * 16;
        if raw.len() != expected {
            return Err(Error::InvalidInput(format!(
                "raw companion holds {} bytes, grid needs {expected}",
                raw.len()
            )));
        }
        let values: Vec<Complex64> = raw
            .chunks_exact(16)
            .map(|c| {
                let re = f64::from_le_bytes(c[0..8].try_into().unwrap());
                let im = f64::from_le_bytes(c[8..16].try_into().unwrap());
                Complex64::new(re, im)
            })
            .collect();
        let values = ArrayD::from_shape_vec(IxDyn(&grid.shape()), values)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        GridSymbol::new(grid, header.n, &header.domain, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centered_axis_covers_half_open_box() {
        let ax = AxisSpec::new(8, 4.0).unwrap();
        assert_eq!(ax.spacing(), 1.0);
        assert_eq!(ax.coord(0), -4.0);
        assert_eq!(ax.coord(7), 3.0);
        let d = ax.dual();
        // dual spacing 2π/(N h) = π/4, extent π/h = π
        assert!((d.spacing() - std::f64::consts::PI / 4.0).abs() < 1e-15);
        assert!((d.extent - std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn odd_point_count_rejected() {
        assert!(AxisSpec::new(7, 1.0).is_err());
        assert!(AxisSpec::new(4, -1.0).is_err());
    }

    #[test]
    fn row_major_index_iteration() {
        let g = Grid::new(vec![
            AxisSpec::new(2, 1.0).unwrap(),
            AxisSpec::new(4, 2.0).unwrap(),
        ]);
        let idx: Vec<Vec<usize>> = g.indices().collect();
        assert_eq!(idx.len(), 8);
        assert_eq!(idx[0], vec![0, 0]);
        assert_eq!(idx[1], vec![0, 1]);
        assert_eq!(idx[4], vec![1, 0]);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sym.json");
        let g = Grid::isotropic(2, 6, 3.0).unwrap();
        let s = GridSymbol::sample(g, 1, "E", |p| Complex64::new(p[0] * p[1], p[0] - p[1]));
        s.write_to(&path).unwrap();
        let back = GridSymbol::read_from(&path).unwrap();
        assert_eq!(back.domain, "E");
        assert_eq!(back.n, 1);
        assert_eq!(back.grid, s.grid);
        for (a, b) in s.values.iter().zip(back.values.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn truncated_raw_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sym.json");
        let g = Grid::isotropic(1, 4, 2.0).unwrap();
        let s = GridSymbol::sample(g, 1, "position", |p| Complex64::new(p[0], 0.0));
        s.write_to(&path).unwrap();
        std::fs::write(path.with_extension("raw"), [0u8; 24]).unwrap();
        assert!(GridSymbol::read_from(&path).is_err());
    }
}

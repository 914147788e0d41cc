//! Symplectic phase space E = T*ℝⁿ ≅ ℝ²ⁿ, its standard form, and lattices.
//!
//! Coordinates are (x, ξ) with J(x, ξ) = (ξ, −x), so σ(u, v) = (Ju)·v,
//! J² = −1 and J⁻¹ = −J = ᵗJ.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub type PhasePoint = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymplecticSpace {
    pub n: usize,
}

impl SymplecticSpace {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("n must be positive".into()));
        }
        Ok(SymplecticSpace { n })
    }

    /// dim E = 2n.
    pub fn dim(&self) -> usize {
        2 * self.n
    }

    fn check(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "point has {} coordinates, E has dimension {}",
                v.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// J(x, ξ) = (ξ, −x).
    pub fn apply_j(&self, v: &[f64]) -> Result<PhasePoint> {
        self.check(v)?;
        let n = self.n;
        let mut out = vec![0.0; 2 * n];
        for i in 0..n {
            out[i] = v[n + i];
            out[n + i] = -v[i];
        }
        Ok(out)
    }

    /// J⁻¹ = −J.
    pub fn apply_j_inv(&self, v: &[f64]) -> Result<PhasePoint> {
        let mut w = self.apply_j(v)?;
        for c in &mut w {
            *c = -*c;
        }
        Ok(w)
    }

    /// σ(u, v) = (Ju)·v = u_ξ·v_x − u_x·v_ξ.
    pub fn sigma(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        self.check(u)?;
        self.check(v)?;
        let n = self.n;
        let mut s = 0.0;
        for i in 0..n {
            s += u[n + i] * v[i] - u[i] * v[n + i];
        }
        Ok(s)
    }

    /// Chord map q(x, y) = ((x+y)/2, J⁻¹(y−x)) ∈ E×E*.
    pub fn chord(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        self.check(y)?;
        let diff: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
        let star = self.apply_j_inv(&diff)?;
        let mut out = Vec::with_capacity(4 * self.n);
        for i in 0..2 * self.n {
            out.push((x[i] + y[i]) / 2.0);
        }
        out.extend(star);
        Ok(out)
    }

    /// Inverse of the chord map: given (c, v) ∈ E×E*, returns
    /// (x, y) = (c − Jv/2, c + Jv/2).
    pub fn chord_unmap(&self, cv: &[f64]) -> Result<(PhasePoint, PhasePoint)> {
        if cv.len() != 4 * self.n {
            return Err(Error::DimensionMismatch(format!(
                "chord point has {} coordinates, expected {}",
                cv.len(),
                4 * self.n
            )));
        }
        let (c, v) = cv.split_at(2 * self.n);
        let jv = self.apply_j(v)?;
        let x: Vec<f64> = c.iter().zip(&jv).map(|(a, b)| a - b / 2.0).collect();
        let y: Vec<f64> = c.iter().zip(&jv).map(|(a, b)| a + b / 2.0).collect();
        Ok((x, y))
    }
}

/// Max-norm of a coordinate vector; shell bookkeeping for lattice sums.
pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, c| m.max(c.abs()))
}

pub fn euclid_norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// ⟨v⟩ = (1 + |v|²)^{1/2} with the Euclidean norm.
pub fn bracket(v: &[f64]) -> f64 {
    (1.0 + v.iter().map(|c| c * c).sum::<f64>()).sqrt()
}

/// A point of a [`Lattice`], carrying its integer coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticePoint {
    pub index: Vec<i64>,
    pub point: Vec<f64>,
}

/// Full-rank lattice Bℤᵈ + offset in ℝᵈ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    /// Columns are the basis vectors.
    pub basis: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
}

impl Lattice {
    pub fn new(basis: Vec<Vec<f64>>, offset: Vec<f64>) -> Result<Self> {
        let d = offset.len();
        if basis.len() != d || basis.iter().any(|c| c.len() != d) {
            return Err(Error::DimensionMismatch(
                "lattice basis must be square and match the offset dimension".into(),
            ));
        }
        let m = DMatrix::from_fn(d, d, |i, j| basis[j][i]);
        if m.determinant().abs() < 1e-12 {
            return Err(Error::InvalidInput("lattice basis is singular".into()));
        }
        Ok(Lattice { basis, offset })
    }

    /// ℤᵈ.
    pub fn standard(d: usize) -> Self {
        Lattice {
            basis: (0..d)
                .map(|j| (0..d).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
            offset: vec![0.0; d],
        }
    }

    /// c·ℤᵈ.
    pub fn scaled(d: usize, c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::InvalidInput("lattice scale must be positive".into()));
        }
        Ok(Lattice {
            basis: (0..d)
                .map(|j| (0..d).map(|i| if i == j { c } else { 0.0 }).collect())
                .collect(),
            offset: vec![0.0; d],
        })
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn point(&self, index: &[i64]) -> PhasePoint {
        let d = self.dim();
        let mut p = self.offset.clone();
        for (j, &k) in index.iter().enumerate() {
            for i in 0..d {
                p[i] += k as f64 * self.basis[j][i];
            }
        }
        p
    }

    /// All lattice points with |point|_∞ ≤ radius, in lexicographic index
    /// order. The enumeration is exhaustive: integer ranges are derived from
    /// the inverse basis before filtering.
    pub fn points_in_box(&self, radius: f64) -> Result<Vec<LatticePoint>> {
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(Error::InvalidInput(format!(
                "box radius must be finite and nonnegative, got {radius}"
            )));
        }
        let d = self.dim();
        let m = DMatrix::from_fn(d, d, |i, j| self.basis[j][i]);
        let inv = m
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidInput("lattice basis is singular".into()))?;
        let off = DVector::from_column_slice(&self.offset);
        let inv_off = &inv * &off;
        // |k_i| ≤ Σ_j |inv[i][j]|·radius + |(B⁻¹ o)_i|
        let bounds: Vec<i64> = (0..d)
            .map(|i| {
                let row_sum: f64 = (0..d).map(|j| inv[(i, j)].abs()).sum();
                (row_sum * radius + inv_off[i].abs() + 1e-9).ceil() as i64
            })
            .collect();
        let mut out = Vec::new();
        let mut index = vec![0i64; d];
        self.enumerate_rec(0, &bounds, &mut index, radius, &mut out);
        Ok(out)
    }

    fn enumerate_rec(
        &self,
        axis: usize,
        bounds: &[i64],
        index: &mut Vec<i64>,
        radius: f64,
        out: &mut Vec<LatticePoint>,
    ) {
        if axis == self.dim() {
            let p = self.point(index);
            if sup_norm(&p) <= radius + 1e-12 {
                out.push(LatticePoint {
                    index: index.clone(),
                    point: p,
                });
            }
            return;
        }
        for k in -bounds[axis]..=bounds[axis] {
            index[axis] = k;
            self.enumerate_rec(axis + 1, bounds, index, radius, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_of_unit_vectors() {
        let e = SymplecticSpace::new(1).unwrap();
        // σ((1,0),(0,1)) = −1 in the (x, ξ) convention
        assert_eq!(e.sigma(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), -1.0);
        assert_eq!(e.sigma(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn j_squares_to_minus_one() {
        for n in [1usize, 2] {
            let e = SymplecticSpace::new(n).unwrap();
            let v: Vec<f64> = (0..2 * n).map(|i| (i as f64) + 0.5).collect();
            let jj = e.apply_j(&e.apply_j(&v).unwrap()).unwrap();
            for (a, b) in jj.iter().zip(&v) {
                assert_eq!(*a, -b);
            }
            let jinv = e.apply_j_inv(&e.apply_j(&v).unwrap()).unwrap();
            for (a, b) in jinv.iter().zip(&v) {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn sigma_antisymmetric_and_j_invariant() {
        let e = SymplecticSpace::new(2).unwrap();
        let u = [1.0, -2.0, 0.5, 3.0];
        let v = [0.25, 1.0, -1.5, 2.0];
        let s = e.sigma(&u, &v).unwrap();
        assert_eq!(e.sigma(&v, &u).unwrap(), -s);
        let ju = e.apply_j(&u).unwrap();
        let jv = e.apply_j(&v).unwrap();
        assert!((e.sigma(&ju, &jv).unwrap() - s).abs() < 1e-14);
    }

    #[test]
    fn chord_round_trip() {
        let e = SymplecticSpace::new(2).unwrap();
        let x = [0.3, -1.2, 0.7, 2.0];
        let y = [1.1, 0.4, -0.6, 0.9];
        let cv = e.chord(&x, &y).unwrap();
        let (x2, y2) = e.chord_unmap(&cv).unwrap();
        for (a, b) in x2.iter().zip(&x) {
            assert!((a - b).abs() < 1e-14);
        }
        for (a, b) in y2.iter().zip(&y) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn chord_of_coincident_points_is_zero_covector() {
        let e = SymplecticSpace::new(1).unwrap();
        let x = [0.4, -0.9];
        let cv = e.chord(&x, &x).unwrap();
        assert_eq!(&cv[0..2], &x);
        assert_eq!(&cv[2..4], &[0.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let e = SymplecticSpace::new(1).unwrap();
        assert!(e.sigma(&[1.0, 0.0, 0.0], &[0.0, 1.0]).is_err());
        assert!(e.chord(&[1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn unit_lattice_enumeration_counts() {
        let lat = Lattice::standard(2);
        let pts = lat.points_in_box(2.0).unwrap();
        assert_eq!(pts.len(), 25);
        // lexicographic order of indices
        assert_eq!(pts[0].index, vec![-2, -2]);
        assert_eq!(pts.last().unwrap().index, vec![2, 2]);
    }

    #[test]
    fn sheared_lattice_membership_exact() {
        let lat = Lattice::new(vec![vec![1.0, 0.5], vec![0.0, 1.0]], vec![0.25, 0.0]).unwrap();
        let pts = lat.points_in_box(3.0).unwrap();
        for p in &pts {
            assert!(sup_norm(&p.point) <= 3.0 + 1e-9);
            let want = lat.point(&p.index);
            assert_eq!(want, p.point);
        }
        // the box bound is tight: a slightly larger box adds points
        let more = lat.points_in_box(4.0).unwrap();
        assert!(more.len() > pts.len());
    }

    #[test]
    fn singular_basis_rejected() {
        assert!(Lattice::new(vec![vec![1.0, 1.0], vec![2.0, 2.0]], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn unbounded_box_rejected() {
        let lat = Lattice::standard(1);
        assert!(lat.points_in_box(f64::INFINITY).is_err());
    }
}

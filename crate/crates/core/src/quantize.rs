//! Weyl quantization and the twisted (Moyal) product on centered grids.
//!
//! A symbol a(x, ξ) on d base dimensions becomes an N^d × N^d matrix acting
//! on grid samples with quadrature weight h^d. Midpoints (x+y)/2 live on the
//! half grid, so the symbol's spatial axes carry 2N points over the same box
//! while the frequency axes carry the N-point dual. All chord arithmetic is
//! toroidal: wrap-around entries are meaningful only for kernels that decay
//! inside the box.

use crate::error::{Error, Result};
use crate::fourier::{dft_centered_axis, trig_shift_axis};
use crate::grid::{AxisSpec, Grid, GridSymbol};
use crate::phase_space::SymplecticSpace;
use nalgebra::DMatrix;
use ndarray::{ArrayD, IxDyn};
use num_complex::Complex64;
use std::collections::HashMap;

/// The symbol grid matching position axes: per base axis, 2N spatial points
/// on [−L, L) followed by the N-point frequency dual on [−π/h, π/h).
pub fn symbol_grid(pos: &[AxisSpec]) -> Result<Grid> {
    let mut axes = Vec::with_capacity(2 * pos.len());
    for ax in pos {
        axes.push(AxisSpec::new(2 * ax.n, ax.extent)?);
    }
    for ax in pos {
        axes.push(ax.dual());
    }
    Ok(Grid::new(axes))
}

fn check_symbol_grid(a: &GridSymbol, pos: &[AxisSpec]) -> Result<()> {
    let want = symbol_grid(pos)?;
    if a.grid.axes != want.axes {
        return Err(Error::DimensionMismatch(format!(
            "symbol grid {:?} does not match the quantization grid {:?}",
            a.grid.axes, want.axes
        )));
    }
    Ok(())
}

/// Weyl quantization: kernel K(x, y) = (2π)^{−d} ∫ a((x+y)/2, ξ) e^{iξ(x−y)} dξ,
/// discretized as a matrix including the h^d quadrature weight, so that
/// matrix-vector products approximate (Au)(x_i). The unit symbol maps to the
/// identity matrix exactly.
pub fn weyl_quantize(a: &GridSymbol, pos: &[AxisSpec]) -> Result<DMatrix<Complex64>> {
    check_symbol_grid(a, pos)?;
    let d = pos.len();
    let mut b = a.values.clone();
    for ax in 0..d {
        dft_centered_axis(&mut b, d + ax, false);
    }
    let sizes: Vec<usize> = pos.iter().map(|ax| ax.n).collect();
    let np: usize = sizes.iter().product();
    let norm: f64 = sizes.iter().map(|&n| n as f64).product();
    let mut m = DMatrix::<Complex64>::zeros(np, np);
    let mut bi = vec![0usize; 2 * d];
    let mut iv = vec![0usize; d];
    let mut jv = vec![0usize; d];
    for row in 0..np {
        let mut r = row;
        for ax in (0..d).rev() {
            iv[ax] = r % sizes[ax];
            r /= sizes[ax];
        }
        for col in 0..np {
            let mut c = col;
            for ax in (0..d).rev() {
                jv[ax] = c % sizes[ax];
                c /= sizes[ax];
            }
            for ax in 0..d {
                let n = sizes[ax];
                bi[ax] = iv[ax] + jv[ax];
                bi[d + ax] = (iv[ax] + n + n / 2 - jv[ax]) % n;
            }
            m[(row, col)] = b[IxDyn(&bi)] / norm;
        }
    }
    Ok(m)
}

/// Isotropic phase-space grid on E = ℝ^{2n}: 2n equal axes.
pub fn phase_space_grid(n: usize, axis: AxisSpec) -> Result<Grid> {
    Grid::isotropic(2 * n, axis.n, axis.extent)
}

#[derive(Debug, Clone, Copy)]
pub struct MoyalOptions {
    /// Relative spectral or spatial mass allowed within two bins of the box
    /// edge before the product is refused as aliased.
    pub alias_tol: f64,
}

impl Default for MoyalOptions {
    fn default() -> Self {
        MoyalOptions { alias_tol: 1e-6 }
    }
}

pub(crate) fn edge_mass(values: &ArrayD<Complex64>, margin: usize) -> f64 {
    let shape = values.shape().to_vec();
    let mut edge = 0.0f64;
    let mut total = 0.0f64;
    for (idx, v) in values.indexed_iter() {
        let a = v.norm_sqr();
        total += a;
        let on_edge = (0..shape.len())
            .any(|ax| idx[ax] < margin || idx[ax] + margin >= shape[ax]);
        if on_edge {
            edge += a;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        edge / total
    }
}

/// Spectral-only guard: constants and grid-aligned plane waves are exact on
/// the torus, so spatial localization is not required. What invalidates the
/// twisted product is unresolved oscillation, i.e. mass at the Nyquist edge.
fn check_alias(s: &GridSymbol, opts: &MoyalOptions, role: &str) -> Result<()> {
    let mut hat = s.values.clone();
    for ax in 0..s.grid.axes.len() {
        dft_centered_axis(&mut hat, ax, true);
    }
    let spectral = edge_mass(&hat, 2);
    if spectral > opts.alias_tol {
        return Err(Error::Aliasing(format!(
            "{role}: fraction {spectral:.2e} of the spectrum sits at the Nyquist edge"
        )));
    }
    Ok(())
}

/// Twisted product a#b on a common phase-space grid: the double symbol
/// a(z)b(w) acquires the multiplier e^{(i/2)σ(ζ, ω)} on the dual side and is
/// then restricted to the diagonal. Exact for trigonometric symbols aligned
/// with the grid; guarded by spectral and spatial edge-mass checks otherwise.
pub fn moyal_product(a: &GridSymbol, b: &GridSymbol, opts: &MoyalOptions) -> Result<GridSymbol> {
    if a.grid.axes != b.grid.axes {
        return Err(Error::DimensionMismatch(
            "twisted product needs both factors on one grid".into(),
        ));
    }
    let dim = a.grid.axes.len();
    if dim % 2 != 0 {
        return Err(Error::InvalidInput(
            "phase-space grid must have an even number of axes".into(),
        ));
    }
    let n = dim / 2;
    check_alias(a, opts, "left factor")?;
    check_alias(b, opts, "right factor")?;

    let mut shape: Vec<usize> = a.grid.shape();
    shape.extend(b.grid.shape());
    let mut t = ArrayD::<Complex64>::zeros(IxDyn(&shape));
    {
        let af = a.values.as_slice().expect("contiguous");
        let bf = b.values.as_slice().expect("contiguous");
        let tf = t.as_slice_mut().expect("contiguous");
        let m = bf.len();
        for (i, &av) in af.iter().enumerate() {
            let row = &mut tf[i * m..(i + 1) * m];
            for (j, &bv) in bf.iter().enumerate() {
                row[j] = av * bv;
            }
        }
    }
    for ax in 0..2 * dim {
        dft_centered_axis(&mut t, ax, true);
    }
    // dual coordinates per axis
    let duals: Vec<Vec<f64>> = a.grid.axes.iter().map(|ax| ax.dual().coords()).collect();
    {
        let mut u = vec![0.0; dim];
        let mut v = vec![0.0; dim];
        for (idx, val) in t.indexed_iter_mut() {
            for ax in 0..dim {
                u[ax] = duals[ax][idx[ax]];
                v[ax] = duals[ax][idx[dim + ax]];
            }
            // σ(u, v) = Σ_μ u_ξμ v_xμ − u_xμ v_ξμ, inlined for the hot loop
            let mut sig = 0.0;
            for mu in 0..n {
                sig += u[n + mu] * v[mu] - u[mu] * v[n + mu];
            }
            *val *= Complex64::from_polar(1.0, 0.5 * sig);
        }
    }
    for ax in 0..2 * dim {
        dft_centered_axis(&mut t, ax, false);
    }
    let norm: f64 = a
        .grid
        .axes
        .iter()
        .map(|ax| (ax.n * ax.n) as f64)
        .product();
    let mut out = GridSymbol::zeros(a.grid.clone(), n, &a.domain);
    {
        let mut full = vec![0usize; 2 * dim];
        for (idx, slot) in out.values.indexed_iter_mut() {
            for ax in 0..dim {
                full[ax] = idx[ax];
                full[dim + ax] = idx[ax];
            }
            *slot = t[IxDyn(&full)] / norm;
        }
    }
    Ok(out)
}

/// Components of x₀* must sit on the dual lattice of each axis (multiples of
/// π/L) so that e^{iℓ} is a single grid mode.
fn check_dual_aligned(grid: &Grid, x0s: &[f64]) -> Result<()> {
    if x0s.len() != grid.axes.len() {
        return Err(Error::DimensionMismatch(
            "covector dimension does not match the grid".into(),
        ));
    }
    for (ax, &c) in grid.axes.iter().zip(x0s) {
        let step = std::f64::consts::PI / ax.extent;
        let k = c / step;
        if (k - k.round()).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "covector component {c} is not a multiple of π/L = {step}"
            )));
        }
    }
    Ok(())
}

/// e^{iℓ} with ℓ(z) = z·x₀*, sampled on the grid.
pub fn exp_symbol(grid: &Grid, x0s: &[f64]) -> Result<GridSymbol> {
    check_dual_aligned(grid, x0s)?;
    let n = grid.axes.len() / 2;
    let mut s = GridSymbol::zeros(grid.clone(), n, "E");
    for (idx, v) in s.values.indexed_iter_mut() {
        let phase: f64 = (0..grid.axes.len())
            .map(|ax| grid.axes[ax].coord(idx[ax]) * x0s[ax])
            .sum();
        *v = Complex64::from_polar(1.0, phase);
    }
    Ok(s)
}

/// H_ℓ = J x₀* ∈ E for ℓ(z) = z·x₀*.
pub fn hamilton_field(space: &SymplecticSpace, x0s: &[f64]) -> Result<Vec<f64>> {
    space.apply_j(x0s)
}

fn shifted(a: &GridSymbol, shift: &[f64]) -> Result<GridSymbol> {
    let mut out = a.clone();
    for ax in 0..a.grid.axes.len() {
        trig_shift_axis(&mut out.values, ax, &a.grid.axes[ax], shift[ax]);
    }
    Ok(out)
}

fn phase_times(a: &GridSymbol, x0s: &[f64]) -> GridSymbol {
    let mut out = a.clone();
    for (idx, v) in out.values.indexed_iter_mut() {
        let phase: f64 = (0..a.grid.axes.len())
            .map(|ax| a.grid.axes[ax].coord(idx[ax]) * x0s[ax])
            .sum();
        *v *= Complex64::from_polar(1.0, phase);
    }
    out
}

/// e^{iℓ} # a = e^{iℓ} · a(· + H_ℓ/2), evaluated by spectral shift.
pub fn exp_left(x0s: &[f64], a: &GridSymbol) -> Result<GridSymbol> {
    check_dual_aligned(&a.grid, x0s)?;
    let space = SymplecticSpace::new(a.grid.axes.len() / 2)?;
    let h = hamilton_field(&space, x0s)?;
    let half: Vec<f64> = h.iter().map(|c| c / 2.0).collect();
    Ok(phase_times(&shifted(a, &half)?, x0s))
}

/// a # e^{iℓ} = e^{iℓ} · a(· − H_ℓ/2).
pub fn exp_right(a: &GridSymbol, x0s: &[f64]) -> Result<GridSymbol> {
    check_dual_aligned(&a.grid, x0s)?;
    let space = SymplecticSpace::new(a.grid.axes.len() / 2)?;
    let h = hamilton_field(&space, x0s)?;
    let half: Vec<f64> = h.iter().map(|c| -c / 2.0).collect();
    Ok(phase_times(&shifted(a, &half)?, x0s))
}

/// e^{im/2} # a # e^{im/2} = e^{im} a: the two half-shifts cancel because
/// H_m is σ-isotropic (m(· + H_m/2) = m).
pub fn exp_sandwich(a: &GridSymbol, x0s: &[f64]) -> Result<GridSymbol> {
    check_dual_aligned(&a.grid, x0s)?;
    Ok(phase_times(a, x0s))
}

/// e^{iℓ} # a # e^{−iℓ} = a(· + H_ℓ).
pub fn exp_conjugate(a: &GridSymbol, x0s: &[f64]) -> Result<GridSymbol> {
    check_dual_aligned(&a.grid, x0s)?;
    let space = SymplecticSpace::new(a.grid.axes.len() / 2)?;
    let h = hamilton_field(&space, x0s)?;
    shifted(a, &h)
}

/// Phase-space translation on grid samples:
/// (T(γ)f)(x) = e^{iγ_ξ·(x − γ_x/2)} f(x − γ_x). γ_x must be a multiple of h
/// and γ_ξ a multiple of 2π/(Nh) per axis, so T is an exact unitary
/// permutation-with-phase on the torus.
pub fn heisenberg_translation(
    pos: &[AxisSpec],
    gamma_x: &[f64],
    gamma_xi: &[f64],
) -> Result<DMatrix<Complex64>> {
    let d = pos.len();
    if gamma_x.len() != d || gamma_xi.len() != d {
        return Err(Error::DimensionMismatch(
            "translation needs one (γ_x, γ_ξ) pair per axis".into(),
        ));
    }
    let mut steps = vec![0i64; d];
    for ax in 0..d {
        let h = pos[ax].spacing();
        let s = gamma_x[ax] / h;
        if (s - s.round()).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "γ_x component {} is not a multiple of h = {h}",
                gamma_x[ax]
            )));
        }
        steps[ax] = s.round() as i64;
        let dxi = pos[ax].dual().spacing();
        let q = gamma_xi[ax] / dxi;
        if (q - q.round()).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "γ_ξ component {} is not a multiple of 2π/(Nh) = {dxi}",
                gamma_xi[ax]
            )));
        }
    }
    let sizes: Vec<usize> = pos.iter().map(|ax| ax.n).collect();
    let np: usize = sizes.iter().product();
    let mut m = DMatrix::<Complex64>::zeros(np, np);
    let mut iv = vec![0usize; d];
    for row in 0..np {
        let mut r = row;
        for ax in (0..d).rev() {
            iv[ax] = r % sizes[ax];
            r /= sizes[ax];
        }
        let mut col = 0usize;
        let mut phase = 0.0f64;
        for ax in 0..d {
            let n = sizes[ax] as i64;
            let j = (iv[ax] as i64 - steps[ax]).rem_euclid(n) as usize;
            col = col * sizes[ax] + j;
            phase += gamma_xi[ax] * (pos[ax].coord(iv[ax]) - gamma_x[ax] / 2.0);
        }
        m[(row, col)] = Complex64::from_polar(1.0, phase);
    }
    Ok(m)
}

/// Applies the phase-space translation directly to position-grid samples
/// flattened row-major, without materializing the matrix. Matches
/// heisenberg_translation entry for entry.
pub fn translate_samples(
    pos: &[AxisSpec],
    gamma_x: &[f64],
    gamma_xi: &[f64],
    v: &nalgebra::DVector<Complex64>,
) -> Result<nalgebra::DVector<Complex64>> {
    let d = pos.len();
    if gamma_x.len() != d || gamma_xi.len() != d {
        return Err(Error::DimensionMismatch(
            "translation needs one (γ_x, γ_ξ) pair per axis".into(),
        ));
    }
    let sizes: Vec<usize> = pos.iter().map(|ax| ax.n).collect();
    let np: usize = sizes.iter().product();
    if v.len() != np {
        return Err(Error::DimensionMismatch(format!(
            "sample vector has {} entries, grid has {np}",
            v.len()
        )));
    }
    let mut steps = vec![0i64; d];
    for ax in 0..d {
        let h = pos[ax].spacing();
        let s = gamma_x[ax] / h;
        if (s - s.round()).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "γ_x component {} is not a multiple of h = {h}",
                gamma_x[ax]
            )));
        }
        steps[ax] = s.round() as i64;
        let dxi = pos[ax].dual().spacing();
        let q = gamma_xi[ax] / dxi;
        if (q - q.round()).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "γ_ξ component {} is not a multiple of 2π/(Nh) = {dxi}",
                gamma_xi[ax]
            )));
        }
    }
    let mut out = nalgebra::DVector::<Complex64>::zeros(np);
    let mut iv = vec![0usize; d];
    for row in 0..np {
        let mut r = row;
        for ax in (0..d).rev() {
            iv[ax] = r % sizes[ax];
            r /= sizes[ax];
        }
        let mut col = 0usize;
        let mut phase = 0.0f64;
        for ax in 0..d {
            let n = sizes[ax] as i64;
            let j = (iv[ax] as i64 - steps[ax]).rem_euclid(n) as usize;
            col = col * sizes[ax] + j;
            phase += gamma_xi[ax] * (pos[ax].coord(iv[ax]) - gamma_x[ax] / 2.0);
        }
        out[row] = Complex64::from_polar(1.0, phase) * v[col];
    }
    Ok(out)
}

/// Sparse polynomial symbol on ℝ^{2n}; exponents are per-coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct PolySymbol {
    pub dim: usize,
    terms: HashMap<Vec<u16>, Complex64>,
}

impl PolySymbol {
    pub fn new(dim: usize) -> Self {
        PolySymbol {
            dim,
            terms: HashMap::new(),
        }
    }

    pub fn constant(dim: usize, c: Complex64) -> Self {
        let mut p = PolySymbol::new(dim);
        p.add_term(&vec![0; dim], c);
        p
    }

    pub fn coordinate(dim: usize, axis: usize) -> Self {
        let mut e = vec![0u16; dim];
        e[axis] = 1;
        let mut p = PolySymbol::new(dim);
        p.add_term(&e, Complex64::new(1.0, 0.0));
        p
    }

    pub fn add_term(&mut self, exps: &[u16], c: Complex64) {
        assert_eq!(exps.len(), self.dim);
        let entry = self.terms.entry(exps.to_vec()).or_insert(Complex64::new(0.0, 0.0));
        *entry += c;
        if entry.norm() == 0.0 {
            self.terms.remove(exps);
        }
    }

    pub fn scale(&self, c: Complex64) -> Self {
        let mut out = PolySymbol::new(self.dim);
        for (e, v) in &self.terms {
            out.add_term(e, c * v);
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let mut out = self.clone();
        for (e, v) in &other.terms {
            out.add_term(e, *v);
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let mut out = PolySymbol::new(self.dim);
        for (e1, v1) in &self.terms {
            for (e2, v2) in &other.terms {
                let e: Vec<u16> = e1.iter().zip(e2).map(|(a, b)| a + b).collect();
                out.add_term(&e, v1 * v2);
            }
        }
        out
    }

    pub fn deriv(&self, axis: usize) -> Self {
        let mut out = PolySymbol::new(self.dim);
        for (e, v) in &self.terms {
            if e[axis] == 0 {
                continue;
            }
            let mut d = e.clone();
            d[axis] -= 1;
            out.add_term(&d, v * e[axis] as f64);
        }
        out
    }

    pub fn degree(&self) -> usize {
        self.terms
            .keys()
            .map(|e| e.iter().map(|&k| k as usize).sum())
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, z: &[f64]) -> Complex64 {
        let mut s = Complex64::new(0.0, 0.0);
        for (e, v) in &self.terms {
            let mono: f64 = e
                .iter()
                .zip(z)
                .map(|(&k, &t)| t.powi(k as i32))
                .product();
            s += v * mono;
        }
        s
    }

    pub fn coeff(&self, exps: &[u16]) -> Complex64 {
        self.terms
            .get(exps)
            .copied()
            .unwrap_or(Complex64::new(0.0, 0.0))
    }

    pub fn max_coeff_diff(&self, other: &Self) -> f64 {
        let mut keys: Vec<Vec<u16>> = self.terms.keys().cloned().collect();
        for k in other.terms.keys() {
            if !self.terms.contains_key(k) {
                keys.push(k.clone());
            }
        }
        keys.iter()
            .map(|k| (self.coeff(k) - other.coeff(k)).norm())
            .fold(0.0, f64::max)
    }

    fn deriv_multi(&self, offset: usize, alpha: &[u16]) -> Self {
        let mut out = self.clone();
        for (mu, &k) in alpha.iter().enumerate() {
            for _ in 0..k {
                out = out.deriv(offset + mu);
            }
        }
        out
    }
}

fn multi_indices(n: usize, total: usize) -> Vec<Vec<u16>> {
    if n == 1 {
        return vec![vec![total as u16]];
    }
    let mut out = Vec::new();
    for first in 0..=total {
        for mut rest in multi_indices(n - 1, total - first) {
            let mut v = vec![first as u16];
            v.append(&mut rest);
            out.push(v);
        }
    }
    out
}

fn multinomial(k: usize, alpha: &[u16], beta: &[u16]) -> f64 {
    let fact = |m: usize| -> f64 { (1..=m).map(|i| i as f64).product() };
    let mut denom = 1.0;
    for &a in alpha.iter().chain(beta) {
        denom *= fact(a as usize);
    }
    fact(k) / denom
}

/// Exact twisted product of polynomials: the series
/// Σ_k (i/2)^k / k! [Σ_{|α|+|β|=k} k!/(α!β!) (−1)^{|β|}
/// (∂_x^α ∂_ξ^β a)(∂_ξ^α ∂_x^β b)] terminates at min(deg a, deg b).
pub fn moyal_poly(a: &PolySymbol, b: &PolySymbol) -> Result<PolySymbol> {
    if a.dim != b.dim || a.dim % 2 != 0 {
        return Err(Error::DimensionMismatch(
            "polynomial factors must share an even dimension".into(),
        ));
    }
    let n = a.dim / 2;
    let kmax = a.degree().min(b.degree());
    let mut out = PolySymbol::new(a.dim);
    let mut ihalf_pow = Complex64::new(1.0, 0.0);
    let ihalf = Complex64::new(0.0, 0.5);
    let mut k_fact = 1.0f64;
    for k in 0..=kmax {
        if k > 0 {
            ihalf_pow *= ihalf;
            k_fact *= k as f64;
        }
        for asum in 0..=k {
            for alpha in multi_indices(n, asum) {
                for beta in multi_indices(n, k - asum) {
                    let sign = if (k - asum) % 2 == 0 { 1.0 } else { -1.0 };
                    let c = multinomial(k, &alpha, &beta) * sign;
                    let da = a.deriv_multi(0, &alpha).deriv_multi(n, &beta);
                    if da.terms.is_empty() {
                        continue;
                    }
                    let db = b.deriv_multi(n, &alpha).deriv_multi(0, &beta);
                    if db.terms.is_empty() {
                        continue;
                    }
                    let term = da.mul(&db).scale(ihalf_pow * (c / k_fact));
                    out = out.add(&term);
                }
            }
        }
    }
    Ok(out)
}

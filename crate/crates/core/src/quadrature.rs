//! Adaptive tensor quadrature over ℝᵈ and symbolic integrability tests.
//!
//! Values are produced by Gauss–Legendre panels on a core box [−r₀, r₀]ᵈ
//! plus dyadic frame shells [−2ᵏr₀, 2ᵏr₀]ᵈ ∖ [−2ᵏ⁻¹r₀, 2ᵏ⁻¹r₀]ᵈ, each
//! refined at its own scale. Shell accumulation stops once the measured
//! geometric tail is negligible, but never before `min_r`, so mass away from
//! the origin is still found. Whether an integral converges at all is never
//! decided numerically: callers run [`integrable_on_rd`] on the tail
//! exponents first. Integrands are assumed smooth at unit scale or coarser.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// Gauss–Legendre nodes and weights on [−1, 1], by Newton iteration on Pₙ.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 2);
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            // Pₙ(x) and Pₙ′(x) via the three-term recurrence
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (mut p0, mut p1) = (1.0, x);
        for k in 2..=n {
            let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Controls for [`integrate_rd`].
#[derive(Debug, Clone, Copy)]
pub struct QuadConfig {
    /// Panel refinement stops when successive values agree to this.
    pub rel_tol: f64,
    /// Shell accumulation stops when the estimated remaining tail drops
    /// below this, relative to the accumulated value.
    pub shell_tol: f64,
    pub r0: f64,
    /// Shells are always scanned out to at least this radius.
    pub min_r: f64,
    pub max_r: f64,
    pub max_panels: usize,
    pub gl_order: usize,
    /// Scale floor for the relative stop rules; keeps a zero integrand from
    /// doubling forever.
    pub abs_tol: f64,
}

impl Default for QuadConfig {
    fn default() -> Self {
        QuadConfig {
            rel_tol: 1e-9,
            shell_tol: 1e-8,
            r0: 8.0,
            min_r: 64.0,
            max_r: 1e9,
            max_panels: 128,
            gl_order: 10,
            abs_tol: 1e-14,
        }
    }
}

impl QuadConfig {
    /// Coarser settings for dimension ≥ 3 tensor products.
    pub fn coarse(dim: usize) -> Self {
        if dim <= 2 {
            QuadConfig::default()
        } else {
            QuadConfig {
                rel_tol: 1e-6,
                shell_tol: 1e-6,
                r0: 6.0,
                min_r: 24.0,
                max_r: 1e6,
                max_panels: 16,
                gl_order: 6,
                abs_tol: 1e-14,
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadratureReport {
    pub value: f64,
    pub truncation_radius: f64,
    pub panels: usize,
    pub shells: usize,
}

fn cell_integral<F>(f: &F, lo: &[f64], hi: &[f64], panels: usize, order: usize) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let dim = lo.len();
    let (nodes, weights) = gauss_legendre(order);
    let m = panels * order;
    // per-axis point/weight tables over all panels
    let mut pts = vec![0.0; dim * m];
    let mut wts = vec![0.0; dim * m];
    for ax in 0..dim {
        let cell = (hi[ax] - lo[ax]) / panels as f64;
        let half = cell / 2.0;
        for p in 0..panels {
            let center = lo[ax] + (p as f64 + 0.5) * cell;
            for q in 0..order {
                pts[ax * m + p * order + q] = center + half * nodes[q];
                wts[ax * m + p * order + q] = half * weights[q];
            }
        }
    }
    let total = m.pow(dim as u32);
    let mut x = vec![0.0; dim];
    let mut sum = 0.0;
    for mut flat in 0..total {
        let mut w = 1.0;
        for ax in (0..dim).rev() {
            let i = flat % m;
            flat /= m;
            x[ax] = pts[ax * m + i];
            w *= wts[ax * m + i];
        }
        sum += w * f(&x);
    }
    sum
}

/// Panel-doubling refinement on one rectangle. `abs_floor` lets a cell that
/// is negligible for the caller stop early.
fn refine_cell<F>(
    f: &F,
    lo: &[f64],
    hi: &[f64],
    cfg: &QuadConfig,
    abs_floor: f64,
) -> Result<(f64, usize)>
where
    F: Fn(&[f64]) -> f64,
{
    let mut panels = 4usize.min(cfg.max_panels);
    let mut prev = cell_integral(f, lo, hi, panels, cfg.gl_order);
    loop {
        let next_panels = panels * 2;
        if next_panels > cfg.max_panels {
            return Err(Error::QuadratureNonConvergence(format!(
                "panel refinement exhausted at {panels} panels per axis on cell {lo:?}..{hi:?}"
            )));
        }
        let next = cell_integral(f, lo, hi, next_panels, cfg.gl_order);
        if !next.is_finite() {
            return Err(Error::InvalidInput(
                "integrand produced a non-finite value".into(),
            ));
        }
        let tol = (cfg.rel_tol * next.abs().max(prev.abs())).max(abs_floor);
        if (next - prev).abs() <= tol {
            return Ok((next, next_panels));
        }
        prev = next;
        panels = next_panels;
    }
}

/// ∫_{[−r,r]^d} f, refining panels until two successive levels agree.
pub fn integrate_box<F>(f: &F, dim: usize, r: f64, cfg: &QuadConfig) -> Result<(f64, usize)>
where
    F: Fn(&[f64]) -> f64,
{
    refine_cell(f, &vec![-r; dim], &vec![r; dim], cfg, 0.0)
}

/// The frame [−r2, r2]^d ∖ [−r1, r1]^d as 2d disjoint slabs.
fn frame_integral<F>(
    f: &F,
    dim: usize,
    r1: f64,
    r2: f64,
    cfg: &QuadConfig,
    abs_floor: f64,
) -> Result<(f64, usize)>
where
    F: Fn(&[f64]) -> f64,
{
    let mut sum = 0.0;
    let mut max_panels = 0usize;
    for ax in 0..dim {
        for sign in [-1.0f64, 1.0] {
            let mut lo = vec![0.0; dim];
            let mut hi = vec![0.0; dim];
            for j in 0..dim {
                // axes before ax stay inside the inner box, later ones span
                // the outer box; that tiles the frame without overlap
                let b = if j < ax { r1 } else { r2 };
                lo[j] = -b;
                hi[j] = b;
            }
            if sign < 0.0 {
                lo[ax] = -r2;
                hi[ax] = -r1;
            } else {
                lo[ax] = r1;
                hi[ax] = r2;
            }
            let (v, p) = refine_cell(f, &lo, &hi, cfg, abs_floor)?;
            sum += v;
            max_panels = max_panels.max(p);
        }
    }
    Ok((sum, max_panels))
}

/// ∫_{ℝ^d} f by dyadic shell accumulation. Call only after a symbolic
/// convergence check; numerics here only ever decide *where* to truncate.
pub fn integrate_rd<F>(f: &F, dim: usize, cfg: &QuadConfig) -> Result<QuadratureReport>
where
    F: Fn(&[f64]) -> f64,
{
    let (mut total, mut panels) = integrate_box(f, dim, cfg.r0, cfg)?;
    let mut r = cfg.r0;
    let mut shells = 0usize;
    let mut prev_shell: Option<f64> = None;
    loop {
        if 2.0 * r > cfg.max_r {
            return Err(Error::QuadratureNonConvergence(format!(
                "shell contributions still relevant at radius {r}"
            )));
        }
        let scale = total.abs().max(cfg.abs_tol);
        let floor = 0.05 * cfg.rel_tol * scale;
        let (shell, p) = frame_integral(f, dim, r, 2.0 * r, cfg, floor)?;
        total += shell;
        panels = panels.max(p);
        r *= 2.0;
        shells += 1;
        // measured geometric decay of successive shells bounds the tail
        let q = match prev_shell {
            Some(p) if p.abs() > 0.0 => (shell / p).abs().min(0.9),
            _ => 0.5,
        };
        prev_shell = Some(shell);
        let tail = shell.abs() * q / (1.0 - q);
        let scale = total.abs().max(cfg.abs_tol);
        if r >= cfg.min_r && shell.abs().max(tail) <= cfg.shell_tol * scale {
            return Ok(QuadratureReport {
                value: total,
                truncation_radius: r,
                panels,
                shells,
            });
        }
    }
}

/// One bracket-power factor ⟨Mu + b⟩^p of an integrand on ℝᵈ; only the
/// linear part matters for behavior at infinity.
#[derive(Debug, Clone)]
pub struct TailAtom {
    pub linear: DMatrix<f64>,
    pub exponent: f64,
}

#[derive(Debug, Clone)]
pub struct TailVerdict {
    pub integrable: bool,
    /// Worst value of Σ_{active atoms} p + dim V over candidate subspaces;
    /// nonnegative means divergent (0 is the log-borderline case).
    pub worst_excess: f64,
    pub worst_subspace_dim: usize,
}

fn null_space(stacked: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    if stacked.nrows() == 0 {
        return DMatrix::identity(dim, dim);
    }
    let svd = stacked.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested v_t");
    let tol = 1e-9 * svd.singular_values.iter().cloned().fold(1.0, f64::max);
    let rank = svd.singular_values.iter().filter(|s| **s > tol).count();
    // rows rank..dim of V^T span the kernel; V^T may have fewer rows than dim
    let mut basis_cols = Vec::new();
    for i in rank..v_t.nrows() {
        basis_cols.push(v_t.row(i).transpose());
    }
    // complete with coordinates absent from V^T (thin SVD)
    if v_t.nrows() < dim {
        let q: DMatrix<f64> = DMatrix::from_columns(
            &(0..v_t.nrows())
                .map(|i| v_t.row(i).transpose())
                .collect::<Vec<_>>(),
        );
        for j in 0..dim {
            let e = DMatrix::<f64>::identity(dim, dim).column(j).into_owned();
            let proj = &q * (q.transpose() * &e);
            let res = &e - proj;
            if res.norm() > 1e-6 {
                basis_cols.push(res.normalize());
            }
        }
    }
    if basis_cols.is_empty() {
        DMatrix::zeros(dim, 0)
    } else {
        DMatrix::from_columns(&basis_cols)
    }
}

/// Symbolic integrability of Π ⟨M_i u + b_i⟩^{p_i} over ℝᵈ.
///
/// For every subset S of atoms, take V = ∩_{i∈S} ker M_i. Along directions in
/// V the atoms vanishing there are bounded, the rest scale like |u|^{p}, and
/// the region near V carries |u|^{dim V − 1} du. The product is integrable
/// iff Σ_{M_i|_V ≠ 0} p_i + dim V < 0 for every such V ≠ {0}, including
/// V = ℝᵈ. Equality is the logarithmically divergent borderline.
pub fn integrable_on_rd(atoms: &[TailAtom], dim: usize) -> TailVerdict {
    let k = atoms.len();
    assert!(k <= 20, "tail test is exponential in the atom count");
    let mut worst = f64::NEG_INFINITY;
    let mut worst_dim = 0usize;
    for mask in 0..(1u32 << k) {
        let members: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let rows: usize = members.iter().map(|&i| atoms[i].linear.nrows()).sum();
        let mut stacked = DMatrix::zeros(rows, dim);
        let mut r = 0;
        for &i in &members {
            let m = &atoms[i].linear;
            stacked.rows_mut(r, m.nrows()).copy_from(m);
            r += m.nrows();
        }
        let basis = null_space(&stacked, dim);
        let v_dim = basis.ncols();
        if v_dim == 0 {
            continue;
        }
        let mut excess = v_dim as f64;
        for a in atoms {
            let restricted = &a.linear * &basis;
            if restricted.norm() > 1e-9 {
                excess += a.exponent;
            }
        }
        if excess > worst {
            worst = excess;
            worst_dim = v_dim;
        }
    }
    TailVerdict {
        integrable: worst < -1e-9,
        worst_excess: worst,
        worst_subspace_dim: worst_dim,
    }
}

/// (x)₊ with the convention used by the composition exponent formulas.
pub fn pos(x: f64) -> f64 {
    x.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gl_nodes_integrate_polynomials_exactly() {
        let (nodes, weights) = gauss_legendre(6);
        // exact through degree 11
        for k in 0..=11usize {
            let got: f64 = nodes
                .iter()
                .zip(&weights)
                .map(|(x, w)| w * x.powi(k as i32))
                .sum();
            let want = if k % 2 == 0 { 2.0 / (k as f64 + 1.0) } else { 0.0 };
            assert!((got - want).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn gaussian_integral_on_plane() {
        let f = |x: &[f64]| (-(x[0] * x[0] + x[1] * x[1]) / 2.0).exp();
        let rep = integrate_rd(&f, 2, &QuadConfig::default()).unwrap();
        assert!((rep.value - 2.0 * std::f64::consts::PI).abs() < 1e-7);
    }

    #[test]
    fn radial_bracket_power_closed_form() {
        // ∫_{ℝ²} ⟨u⟩^{−3} du = 2π ∫₀^∞ r(1+r²)^{−3/2} dr = 2π
        let f = |x: &[f64]| (1.0 + x[0] * x[0] + x[1] * x[1]).powf(-1.5);
        let rep = integrate_rd(&f, 2, &QuadConfig::default()).unwrap();
        assert!(
            (rep.value - 2.0 * std::f64::consts::PI).abs() < 1e-4 * rep.value,
            "got {}",
            rep.value
        );
    }

    #[test]
    fn off_center_bump_found_by_refinement() {
        // mass concentrated away from the origin
        let c = 37.0;
        let f = |x: &[f64]| (-((x[0] - c).powi(2) + (x[1] + c).powi(2))).exp();
        let rep = integrate_rd(&f, 2, &QuadConfig::default()).unwrap();
        assert!((rep.value - std::f64::consts::PI).abs() < 1e-6);
    }

    fn atom(rows: Vec<Vec<f64>>, p: f64) -> TailAtom {
        let r = rows.len();
        let c = rows[0].len();
        TailAtom {
            linear: DMatrix::from_fn(r, c, |i, j| rows[i][j]),
            exponent: p,
        }
    }

    #[test]
    fn full_rank_decay_integrable_iff_below_minus_dim() {
        let id2 = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(integrable_on_rd(&[atom(id2.clone(), -3.0)], 2).integrable);
        assert!(!integrable_on_rd(&[atom(id2.clone(), -2.0)], 2).integrable);
        assert!(!integrable_on_rd(&[atom(id2, -1.0)], 2).integrable);
    }

    #[test]
    fn missing_direction_diverges() {
        // ⟨u₁⟩^{−3} on ℝ²: no decay along u₂
        let v = integrable_on_rd(&[atom(vec![vec![1.0, 0.0]], -3.0)], 2);
        assert!(!v.integrable);
        assert_eq!(v.worst_subspace_dim, 1);
    }

    #[test]
    fn split_axes_product_converges() {
        let a1 = atom(vec![vec![1.0, 0.0]], -1.5);
        let a2 = atom(vec![vec![0.0, 1.0]], -1.5);
        assert!(integrable_on_rd(&[a1, a2], 2).integrable);
    }

    #[test]
    fn growth_against_strong_decay() {
        let id2 = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let grow = atom(vec![vec![1.0, 0.0]], 1.0);
        let decay = atom(id2, -4.0);
        assert!(integrable_on_rd(&[grow, decay], 2).integrable);
    }

    #[test]
    fn constant_integrand_diverges() {
        let v = integrable_on_rd(&[], 2);
        assert!(!v.integrable);
        assert_eq!(v.worst_subspace_dim, 2);
    }

    #[test]
    fn borderline_counts_as_divergent() {
        // two full-rank factors, exponents −1 each on ℝ²: excess 0, log case
        let id2 = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let v = integrable_on_rd(
            &[atom(id2.clone(), -1.0), atom(id2, -1.0)],
            2,
        );
        assert!(!v.integrable);
        assert!(v.worst_excess.abs() < 1e-12);
    }
}

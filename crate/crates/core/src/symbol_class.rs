//! Symbol-class membership through lattice-localized norms.
//!
//! A symbol a on phase space E is tested against an order function m on E×E*
//! by cutting it with a family of window operators χ_γ^w centered on a lattice
//! Γ ⊂ E×E* and comparing ‖χ_γ^w a‖ with m(γ). Three routes are provided: the
//! quantized-window route (χ_γ^w a pseudodifferential operator on L²(E)), the
//! short-time transform route (spatial windows + Fourier transform), and a
//! sequence-space aggregation of the ratio field.

use crate::bspaces::{self, SeqFn, SeqSpaceSpec};
use crate::error::{Error, Result};
use crate::fourier::dft_centered_axis;
use crate::grid::{AxisSpec, Grid, GridSymbol};
use crate::order_functions::OrderFunction;
use crate::quantize::{self, heisenberg_translation, symbol_grid, weyl_quantize};
use nalgebra::DMatrix;
#[cfg(test)]
use nalgebra::DVector;
use ndarray::{ArrayD, IxDyn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Scaled radius beyond which a lattice point counts as boundary ring.
pub(crate) const EDGE_BAND: f64 = 0.8;
/// A certified member must have its boundary-ring ratios below this fraction
/// of the overall sup: the sampled box saw the profile turn over.
pub(crate) const EDGE_DECAY_MAX: f64 = 0.5;
/// Relative spectral mass tolerated within two bins of the Nyquist edge.
const ALIAS_TOL: f64 = 1e-6;
/// Boundary samples of the symbol must sit below this fraction of its peak.
pub(crate) const BOUNDARY_DECAY: f64 = 1e-8;

/// Whether the windows act as quantized operators on L²(E) or as pointwise
/// spatial cutoffs on E.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowMode {
    Quantized,
    Spatial,
}

/// A lattice of translated copies of one window, summing to 1 on the torus.
///
/// Quantized mode: the base window lives on the doubled symbol grid of `pos`
/// and translates over a lattice in E×E*. Spatial mode: the base window lives
/// directly on the E grid and translates over position only.
#[derive(Debug, Clone)]
pub struct WindowFamily {
    pub mode: WindowMode,
    /// Operator axes (Quantized) or the sample grid axes (Spatial).
    pub pos: Vec<AxisSpec>,
    /// χ₀ sampled on its grid.
    pub base: GridSymbol,
    /// Lattice step per position axis, in units of the grid spacing h.
    pub steps_x: Vec<i64>,
    /// Lattice step per dual axis, in units of 2π/(Nh). Empty in Spatial mode.
    pub steps_xi: Vec<i64>,
    pub width: f64,
    /// Σ_γ τ_γ χ₀ = 1 verified on the whole grid.
    pub partition: bool,
    pub partition_residual: f64,
    /// Per-axis 1D profiles whose outer product is `base`.
    pub profiles: Vec<Vec<f64>>,
}

/// One localized ratio ‖χ_γ^w a‖ / m(γ).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatioSample {
    pub location: Vec<f64>,
    pub value: f64,
}

/// Outcome of a membership sweep: the aggregated norm, the boundary-ring
/// fraction of the sup, and the verdict.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MembershipReport {
    pub mode: String,
    pub p: String,
    pub norm: f64,
    /// sup of boundary-ring ratios over the overall sup. A verdict is only a
    /// certificate when the profile has turned over inside the sampled box.
    pub edge_fraction: f64,
    pub member: bool,
    pub lattice_points: usize,
    pub samples: Vec<RatioSample>,
}

/// Periodized Gaussian on one axis of a periodic grid, divided by the sum of
/// its own lattice translates. The translate sum over one cell is then 1
/// identically, including across the wrap.
fn axis_profile(coords: &[f64], period: f64, step: f64, width: f64) -> Result<Vec<f64>> {
    let wraps = (10.0 * width / period).ceil() as i64 + 1;
    let g_tor = |t: f64| -> f64 {
        let mut s = 0.0;
        for m in -wraps..=wraps {
            let u = t + m as f64 * period;
            s += (-u * u / (2.0 * width * width)).exp();
        }
        s
    };
    let count = (period / step).round() as i64;
    let mut vals = Vec::with_capacity(coords.len());
    for &t in coords {
        let num = g_tor(t);
        let mut den = 0.0;
        for j in 0..count {
            den += g_tor(t - j as f64 * step);
        }
        if den < 1e-280 {
            return Err(Error::InvalidInput(format!(
                "window width {width} underflows against lattice step {step}"
            )));
        }
        vals.push(num / den);
    }
    Ok(vals)
}

fn check_steps(steps: &[i64], axes: &[AxisSpec], what: &str) -> Result<()> {
    for (s, ax) in steps.iter().zip(axes) {
        if *s <= 0 || ax.n % (2 * *s as usize) != 0 {
            return Err(Error::InvalidInput(format!(
                "{what} step {s} must be positive with 2·step dividing the axis size {}",
                ax.n
            )));
        }
    }
    Ok(())
}

/// Outer product of per-axis profiles on `grid`, with the verified residual
/// of the cell translate sum.
fn assemble(
    grid: Grid,
    n: usize,
    domain: &str,
    profiles: Vec<Vec<f64>>,
    rolls: &[usize],
) -> (GridSymbol, f64) {
    let shape = grid.shape();
    let mut values = ArrayD::<Complex64>::zeros(IxDyn(&shape));
    for idx in grid.indices() {
        let mut v = 1.0;
        for (ax, &i) in idx.iter().enumerate() {
            v *= profiles[ax][i];
        }
        values[IxDyn(&idx)] = Complex64::new(v, 0.0);
    }
    // Cell sums factorize over axes, so the residual can be checked from the
    // per-axis roll sums alone.
    let mut residual: f64 = 0.0;
    for idx in grid.indices() {
        let mut prod = 1.0;
        for (ax, &i) in idx.iter().enumerate() {
            let n_ax = shape[ax];
            let mut s = 0.0;
            let mut j = i;
            loop {
                s += profiles[ax][j];
                j = (j + rolls[ax]) % n_ax;
                if j == i {
                    break;
                }
            }
            prod *= s;
        }
        residual = residual.max((prod - 1.0).abs());
    }
    let base = GridSymbol::new(grid, n, domain, values).expect("shape matches by construction");
    (base, residual)
}

/// Window family on E×E* for the quantized route. `steps_x[ax]` counts grid
/// spacings h per lattice step in position, `steps_xi[ax]` dual spacings in
/// frequency; both must divide N so that the cell translates tile the torus.
pub fn build_partition(
    pos: &[AxisSpec],
    steps_x: &[i64],
    steps_xi: &[i64],
    width: f64,
) -> Result<WindowFamily> {
    if pos.is_empty() || steps_x.len() != pos.len() || steps_xi.len() != pos.len() {
        return Err(Error::DimensionMismatch(
            "need one position and one dual step per axis".into(),
        ));
    }
    if width <= 0.0 {
        return Err(Error::InvalidInput("window width must be positive".into()));
    }
    check_steps(steps_x, pos, "position")?;
    check_steps(steps_xi, pos, "dual")?;
    let grid = symbol_grid(pos)?;
    let d = pos.len();
    let mut profiles = Vec::with_capacity(2 * d);
    let mut rolls = Vec::with_capacity(2 * d);
    for (ax, spec) in pos.iter().enumerate() {
        // Spatial half-grid: 2N points, spacing h/2, period 2L.
        let coords = grid.axes[ax].coords();
        let period = 2.0 * spec.extent;
        let step = steps_x[ax] as f64 * spec.spacing();
        profiles.push(axis_profile(&coords, period, step, width)?);
        rolls.push(2 * steps_x[ax] as usize);
    }
    for (ax, spec) in pos.iter().enumerate() {
        let dual = spec.dual();
        let coords = grid.axes[d + ax].coords();
        let period = 2.0 * dual.extent;
        let step = steps_xi[ax] as f64 * dual.spacing();
        profiles.push(axis_profile(&coords, period, step, width)?);
        rolls.push(steps_xi[ax] as usize);
    }
    let (base, residual) = assemble(grid, pos.len(), "ExEstar", profiles.clone(), &rolls);
    Ok(WindowFamily {
        mode: WindowMode::Quantized,
        pos: pos.to_vec(),
        base,
        steps_x: steps_x.to_vec(),
        steps_xi: steps_xi.to_vec(),
        width,
        partition: residual <= 1e-10,
        partition_residual: residual,
        profiles,
    })
}

/// Spatial window family on the E grid itself, translating over position only.
pub fn build_spatial_partition(
    axes: &[AxisSpec],
    steps: &[i64],
    width: f64,
) -> Result<WindowFamily> {
    if axes.is_empty() || steps.len() != axes.len() {
        return Err(Error::DimensionMismatch(
            "need one lattice step per axis".into(),
        ));
    }
    if width <= 0.0 {
        return Err(Error::InvalidInput("window width must be positive".into()));
    }
    check_steps(steps, axes, "position")?;
    let grid = Grid::new(axes.to_vec());
    let mut profiles = Vec::with_capacity(axes.len());
    let mut rolls = Vec::with_capacity(axes.len());
    for (ax, spec) in axes.iter().enumerate() {
        let coords = grid.axes[ax].coords();
        let period = 2.0 * spec.extent;
        let step = steps[ax] as f64 * spec.spacing();
        profiles.push(axis_profile(&coords, period, step, width)?);
        rolls.push(steps[ax] as usize);
    }
    let (base, residual) = assemble(grid, axes.len(), "E", profiles.clone(), &rolls);
    Ok(WindowFamily {
        mode: WindowMode::Spatial,
        pos: axes.to_vec(),
        base,
        steps_x: steps.to_vec(),
        steps_xi: Vec::new(),
        width,
        partition: residual <= 1e-10,
        partition_residual: residual,
        profiles,
    })
}

impl WindowFamily {
    /// Index ranges of the fundamental cell: j ∈ [−N/(2k), N/(2k)) per axis.
    /// Beyond the cell the translates repeat on the torus.
    pub fn cell_ranges(&self) -> Vec<std::ops::Range<i64>> {
        let mut r = Vec::new();
        for (ax, spec) in self.pos.iter().enumerate() {
            let c = spec.n as i64 / (2 * self.steps_x[ax]);
            r.push(-c..c);
        }
        for (ax, spec) in self.pos.iter().enumerate() {
            if ax < self.steps_xi.len() {
                let c = spec.n as i64 / (2 * self.steps_xi[ax]);
                r.push(-c..c);
            }
        }
        r
    }

    /// Lattice point coordinates for a cell index, positions then duals.
    pub fn lattice_point(&self, index: &[i64]) -> (Vec<f64>, Vec<f64>) {
        let d = self.pos.len();
        let gx: Vec<f64> = (0..d)
            .map(|ax| index[ax] as f64 * self.steps_x[ax] as f64 * self.pos[ax].spacing())
            .collect();
        let gxi: Vec<f64> = self
            .steps_xi
            .iter()
            .enumerate()
            .map(|(ax, s)| index[d + ax] as f64 * *s as f64 * self.pos[ax].dual().spacing())
            .collect();
        (gx, gxi)
    }
}

fn odometer(ranges: &[std::ops::Range<i64>]) -> Vec<Vec<i64>> {
    let mut out = vec![Vec::new()];
    for r in ranges {
        let mut next = Vec::new();
        for prefix in &out {
            for v in r.clone() {
                let mut p = prefix.clone();
                p.push(v);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

/// Discrete L^p norm from sample magnitudes with quadrature weight, summed in
/// ascending order for order independence. Overwrites `mags`.
fn lp_from_mags(mags: &mut [f64], p: f64, cell_volume: f64) -> f64 {
    if p.is_infinite() {
        return mags.iter().cloned().fold(0.0, f64::max);
    }
    for v in mags.iter_mut() {
        *v = v.powf(p);
    }
    mags.sort_by(f64::total_cmp);
    (mags.iter().sum::<f64>() * cell_volume).powf(1.0 / p)
}

/// Discrete L^p norm of flattened complex samples.
#[cfg(test)]
fn vector_lp(v: &DVector<Complex64>, p: f64, cell_volume: f64) -> f64 {
    let mut mags: Vec<f64> = v.iter().map(|z| z.norm()).collect();
    lp_from_mags(&mut mags, p, cell_volume)
}

pub(crate) fn check_boundary_decay(a: &GridSymbol) -> Result<f64> {
    let peak = a.max_abs();
    if peak == 0.0 {
        return Ok(0.0);
    }
    let shape = a.grid.shape();
    let mut worst: f64 = 0.0;
    for idx in a.grid.indices() {
        if idx
            .iter()
            .enumerate()
            .any(|(ax, &i)| i == 0 || i + 1 == shape[ax])
        {
            worst = worst.max(a.values[IxDyn(&idx)].norm());
        }
    }
    if worst > BOUNDARY_DECAY * peak {
        return Err(Error::InvalidInput(format!(
            "boundary samples reach {:.3e} of the peak; enlarge the box",
            worst / peak
        )));
    }
    Ok(peak)
}

pub(crate) struct RatioField {
    /// (cell index, location, ratio value, scaled radius).
    pub(crate) entries: Vec<(Vec<i64>, Vec<f64>, f64, f64)>,
}

impl RatioField {
    pub(crate) fn sup(&self) -> f64 {
        self.entries.iter().map(|e| e.2).fold(0.0, f64::max)
    }

    pub(crate) fn edge_fraction(&self) -> f64 {
        let all = self.sup();
        if all == 0.0 {
            return 0.0;
        }
        let edge = self
            .entries
            .iter()
            .filter(|e| e.3 >= EDGE_BAND - 1e-9)
            .map(|e| e.2)
            .fold(0.0, f64::max);
        edge / all
    }

    fn top_samples(&self, count: usize) -> Vec<RatioSample> {
        let mut sorted: Vec<&(Vec<i64>, Vec<f64>, f64, f64)> = self.entries.iter().collect();
        sorted.sort_by(|a, b| b.2.total_cmp(&a.2));
        sorted
            .into_iter()
            .take(count)
            .map(|e| RatioSample {
                location: e.1.clone(),
                value: e.2,
            })
            .collect()
    }

    pub(crate) fn report(&self, mode: &str, p: &str) -> MembershipReport {
        let norm = self.sup();
        let edge = self.edge_fraction();
        MembershipReport {
            mode: mode.to_string(),
            p: p.to_string(),
            norm,
            edge_fraction: edge,
            member: norm.is_finite() && (norm == 0.0 || edge <= EDGE_DECAY_MAX),
            lattice_points: self.entries.len(),
            samples: self.top_samples(8),
        }
    }
}

/// Weyl-quantized window restricted to the unwrapped band.
///
/// Entries whose per-axis index offset reaches half the grid couple points
/// through the torus seam. The planar operator has no such channel: its
/// kernel at separations beyond the box half-width is below sample
/// precision, so those entries are zeroed.
fn window_matrix(base: &GridSymbol, pos: &[AxisSpec]) -> Result<DMatrix<Complex64>> {
    let mut m0 = weyl_quantize(base, pos)?;
    let sizes: Vec<usize> = pos.iter().map(|ax| ax.n).collect();
    let np = m0.nrows();
    for i in 0..np {
        for j in 0..np {
            let (mut ri, mut rj) = (i, j);
            let mut cut = false;
            for &n in sizes.iter().rev() {
                let diff = (ri % n) as i64 - (rj % n) as i64;
                if 2 * diff.unsigned_abs() >= n as u64 {
                    cut = true;
                    break;
                }
                ri /= n;
                rj /= n;
            }
            if cut {
                m0[(i, j)] = Complex64::new(0.0, 0.0);
            }
        }
    }
    Ok(m0)
}

/// Ratio field of the quantized route: for every lattice point γ in the
/// seam-free part of the fundamental cell, ‖χ_γ^w a‖_p / m(γ).
///
/// χ_γ^w = T(γ) χ₀^w T(γ)* and T(γ) permutes sample moduli, so
/// ‖χ_γ^w a‖_p = ‖χ₀^w e^{−iγ_ξ x} a(· + γ_x)‖_p up to a global phase. For
/// fixed γ_x the whole dual sweep is one DFT: with C[i,j] = χ₀^w[i,j]·a(t_j+γ_x),
/// the piece samples at γ_ξ are Σ_j C[i,j] e^{−iγ_ξ t_j}.
///
/// The outermost ring of the cell (index −N/(2k)) sits on the torus seam,
/// where the quantized window also couples antipodal points through the
/// wrapped midpoint; those lattice points are excluded as structurally
/// unfaithful to the plane. The scaled radius used for the boundary
/// certificate watches the frequency axes only: position wraps completely on
/// the torus and is controlled by the boundary-decay precondition, while the
/// frequency reach is genuinely truncated at the clean cell edge.
fn quantized_ratio_field(
    a: &GridSymbol,
    m: &OrderFunction,
    w: &WindowFamily,
    p: f64,
) -> Result<RatioField> {
    if w.mode != WindowMode::Quantized {
        return Err(Error::InvalidInput(
            "quantized route needs a Quantized-mode window family".into(),
        ));
    }
    if !w.partition {
        return Err(Error::InvalidInput(
            "window family lacks the partition flag".into(),
        ));
    }
    if a.grid.axes != w.pos {
        return Err(Error::DimensionMismatch(
            "symbol grid does not match the window family's axes".into(),
        ));
    }
    let d = w.pos.len();
    if m.dim != 2 * d {
        return Err(Error::DimensionMismatch(format!(
            "order function dimension {} but the lattice lives in dimension {}",
            m.dim,
            2 * d
        )));
    }
    check_boundary_decay(a)?;
    let m0 = window_matrix(&w.base, &w.pos)?;
    let sizes: Vec<usize> = w.pos.iter().map(|ax| ax.n).collect();
    let np: usize = sizes.iter().product();
    let mut m0_rows = vec![Complex64::new(0.0, 0.0); np * np];
    for j in 0..np {
        for i in 0..np {
            m0_rows[i * np + j] = m0[(i, j)];
        }
    }
    let av: Vec<Complex64> = a.values.iter().cloned().collect();
    let cellvol = a.grid.cell_volume();
    let cx: Vec<i64> = (0..d)
        .map(|ax| sizes[ax] as i64 / (2 * w.steps_x[ax]))
        .collect();
    let cxi: Vec<i64> = (0..d)
        .map(|ax| sizes[ax] as i64 / (2 * w.steps_xi[ax]))
        .collect();
    let ranges_x: Vec<std::ops::Range<i64>> = cx.iter().map(|c| (1 - c)..*c).collect();
    let ranges_xi: Vec<std::ops::Range<i64>> = cxi.iter().map(|c| (1 - c)..*c).collect();
    let caps_xi: Vec<f64> = (0..d)
        .map(|ax| {
            (cxi[ax] - 1).max(1) as f64 * w.steps_xi[ax] as f64 * w.pos[ax].dual().spacing()
        })
        .collect();
    let mut shape = vec![np];
    shape.extend(&sizes);
    let mut c_arr = ArrayD::<Complex64>::zeros(IxDyn(&shape));
    let mut entries = Vec::new();
    for jx in odometer(&ranges_x) {
        let maps: Vec<Vec<usize>> = (0..d)
            .map(|ax| {
                let n = sizes[ax] as i64;
                let s = jx[ax] * w.steps_x[ax];
                (0..sizes[ax])
                    .map(|j| (j as i64 + s).rem_euclid(n) as usize)
                    .collect()
            })
            .collect();
        let mut u = vec![Complex64::new(0.0, 0.0); np];
        let mut iv = vec![0usize; d];
        for (j, slot) in u.iter_mut().enumerate() {
            let mut rest = j;
            for ax in (0..d).rev() {
                iv[ax] = rest % sizes[ax];
                rest /= sizes[ax];
            }
            let mut src = 0usize;
            for ax in 0..d {
                src = src * sizes[ax] + maps[ax][iv[ax]];
            }
            *slot = av[src];
        }
        {
            let flat = c_arr.as_slice_mut().expect("contiguous by construction");
            for i in 0..np {
                let row = &m0_rows[i * np..(i + 1) * np];
                let dst = &mut flat[i * np..(i + 1) * np];
                for (slot, (mv, uv)) in dst.iter_mut().zip(row.iter().zip(&u)) {
                    *slot = mv * uv;
                }
            }
        }
        for ax in 0..d {
            dft_centered_axis(&mut c_arr, 1 + ax, true);
        }
        let gx: Vec<f64> = (0..d)
            .map(|ax| jx[ax] as f64 * w.steps_x[ax] as f64 * w.pos[ax].spacing())
            .collect();
        let flat = c_arr.as_slice().expect("contiguous by construction");
        for q in odometer(&ranges_xi) {
            let mut off = 0usize;
            for ax in 0..d {
                let k = (sizes[ax] as i64 / 2 + q[ax] * w.steps_xi[ax]) as usize;
                off = off * sizes[ax] + k;
            }
            let mut mags: Vec<f64> = (0..np).map(|i| flat[i * np + off].norm()).collect();
            let piece = lp_from_mags(&mut mags, p, cellvol);
            let gxi: Vec<f64> = (0..d)
                .map(|ax| q[ax] as f64 * w.steps_xi[ax] as f64 * w.pos[ax].dual().spacing())
                .collect();
            let scaled = gxi
                .iter()
                .zip(&caps_xi)
                .map(|(v, c)| v.abs() / c)
                .fold(0.0, f64::max);
            let loc: Vec<f64> = gx.iter().chain(gxi.iter()).cloned().collect();
            let ratio = piece / m.eval(&loc);
            let mut index = jx.clone();
            index.extend(&q);
            entries.push((index, loc, ratio, scaled));
        }
    }
    Ok(RatioField { entries })
}

/// Sup over the lattice of ‖χ_γ^w a‖_p / m(γ), with the boundary-decay
/// certificate as the membership verdict. The fundamental cell enumerates
/// every distinct translate on the torus; outside it the required boundary
/// decay of `a` keeps the windowed mass negligible.
pub fn stilde_norm(
    a: &GridSymbol,
    m: &OrderFunction,
    w: &WindowFamily,
    p: f64,
) -> Result<MembershipReport> {
    if !(p >= 1.0) {
        return Err(Error::InvalidInput(format!("piece norm exponent {p} < 1")));
    }
    let field = quantized_ratio_field(a, m, w, p)?;
    let label = if p.is_infinite() {
        "inf".to_string()
    } else {
        format!("{p}")
    };
    Ok(field.report("lattice", &label))
}

/// B-space aggregation of the same ratio field, with L² piece norms. B = ℓ^∞
/// reduces exactly to the sup route.
pub fn bspace_stilde_norm(
    a: &GridSymbol,
    m: &OrderFunction,
    w: &WindowFamily,
    b: &SeqSpaceSpec,
) -> Result<MembershipReport> {
    let field = quantized_ratio_field(a, m, w, 2.0)?;
    let mut u = SeqFn::new(2 * w.pos.len());
    for (index, _, ratio, _) in &field.entries {
        u.set(index.clone(), Complex64::new(*ratio, 0.0));
    }
    let norm = bspaces::seq_norm(&u, b);
    let mut rep = field.report("lattice", &format!("B:{}", serde_json::to_string(b)?));
    rep.norm = norm;
    rep.member = norm.is_finite() && (norm == 0.0 || rep.edge_fraction <= EDGE_DECAY_MAX);
    Ok(rep)
}

/// Short-time transform route: for each spatial lattice point j, Fourier
/// transform χ_j·a and compare |FT(χ_j a)(x*)| against m(j, x*). `cap`
/// restricts the reported x* range per axis so that verdicts can be compared
/// with a quantized route of coarser Nyquist extent.
pub fn stft_membership(
    a: &GridSymbol,
    m: &OrderFunction,
    w: &WindowFamily,
    cap: Option<&[f64]>,
) -> Result<MembershipReport> {
    if w.mode != WindowMode::Spatial {
        return Err(Error::InvalidInput(
            "transform route needs a Spatial-mode window family".into(),
        ));
    }
    if !w.partition {
        return Err(Error::InvalidInput(
            "window family lacks the partition flag".into(),
        ));
    }
    if a.grid.axes != w.pos {
        return Err(Error::DimensionMismatch(
            "symbol grid does not match the window family's axes".into(),
        ));
    }
    let d = w.pos.len();
    if m.dim != 2 * d {
        return Err(Error::DimensionMismatch(format!(
            "order function dimension {} but the joint domain has dimension {}",
            m.dim,
            2 * d
        )));
    }
    if let Some(c) = cap {
        if c.len() != d {
            return Err(Error::DimensionMismatch(
                "need one frequency cap per axis".into(),
            ));
        }
    }
    let duals: Vec<AxisSpec> = w.pos.iter().map(|ax| ax.dual()).collect();
    let caps_xi: Vec<f64> = match cap {
        Some(c) => c.to_vec(),
        None => w.pos.iter().map(|ax| ax.nyquist()).collect(),
    };
    // Continuum-normalized transform: (2π)^{−d/2} Σ f(x) e^{−ix·x*} Π h.
    let scale = a.grid.cell_volume() * (2.0 * PI).powf(-(d as f64) / 2.0);
    let shape = a.grid.shape();
    let mut entries = Vec::new();
    let ranges: Vec<std::ops::Range<i64>> = w
        .pos
        .iter()
        .enumerate()
        .map(|(ax, spec)| {
            let c = spec.n as i64 / (2 * w.steps_x[ax]);
            -c..c
        })
        .collect();
    for index in odometer(&ranges) {
        let mut windowed = ArrayD::<Complex64>::zeros(IxDyn(&shape));
        for idx in a.grid.indices() {
            let mut wv = 1.0;
            for (ax, &i) in idx.iter().enumerate() {
                let n_ax = shape[ax] as i64;
                let roll = index[ax] * w.steps_x[ax];
                let src = (i as i64 - roll).rem_euclid(n_ax) as usize;
                wv *= w.profiles[ax][src];
            }
            windowed[IxDyn(&idx)] = a.values[IxDyn(&idx)] * wv;
        }
        for ax in 0..d {
            dft_centered_axis(&mut windowed, ax, true);
        }
        let total: f64 = windowed.iter().map(|z| z.norm_sqr()).sum();
        if total > 0.0 {
            let frac = quantize::edge_mass(&windowed, 2);
            if frac > ALIAS_TOL {
                return Err(Error::Aliasing(format!(
                    "windowed spectrum keeps {frac:.3e} of its mass within 2 bins of the Nyquist edge"
                )));
            }
        }
        let gx: Vec<f64> = (0..d)
            .map(|ax| index[ax] as f64 * w.steps_x[ax] as f64 * w.pos[ax].spacing())
            .collect();
        for kidx in a.grid.indices() {
            let xstar: Vec<f64> = kidx
                .iter()
                .enumerate()
                .map(|(ax, &k)| duals[ax].coord(k))
                .collect();
            if xstar.iter().zip(&caps_xi).any(|(v, c)| v.abs() > *c) {
                continue;
            }
            let loc: Vec<f64> = gx.iter().chain(xstar.iter()).cloned().collect();
            // Position wraps completely on the torus; only the frequency reach
            // is truncated, so the boundary certificate watches x* alone.
            let scaled = xstar
                .iter()
                .zip(&caps_xi)
                .map(|(v, c)| v.abs() / c)
                .fold(0.0, f64::max);
            let value = windowed[IxDyn(&kidx)].norm() * scale / m.eval(&loc);
            let mut cell = index.clone();
            cell.extend(kidx.iter().map(|&k| k as i64));
            entries.push((cell, loc, value, scaled));
        }
    }
    let field = RatioField { entries };
    Ok(field.report("stft", "inf"))
}

/// Dual window family: Ψ = (Σ_γ (χ̃_γ^ε)^w χ_γ^w)^{−1} on the working space,
/// so that ψ_γ^w = Ψ (χ̃_γ^ε)^w resolves the identity against the partition.
#[derive(Debug, Clone)]
pub struct DualFamily {
    pub window: WindowFamily,
    pub eps: f64,
    /// Ψ as a dense operator on the position grid.
    pub inverse: DMatrix<Complex64>,
    /// Quantized companion window (χ̃^ε)^w before translation.
    pub tilde: DMatrix<Complex64>,
    pub condition: f64,
    /// max |Ψ S − I| entrywise.
    pub residual: f64,
}

impl DualFamily {
    /// ψ_γ^w = Ψ T(γ) (χ̃^ε)^w T(γ)* for the cell index γ.
    pub fn psi_op(&self, index: &[i64]) -> Result<DMatrix<Complex64>> {
        let (gx, gxi) = self.window.lattice_point(index);
        let t = heisenberg_translation(&self.window.pos, &gx, &gxi)?;
        Ok(&self.inverse * &t * &self.tilde * t.adjoint())
    }
}

/// Inverts the frame operator S = Σ_γ (χ̃_γ^ε)^w χ_γ^w numerically. The
/// companion χ̃^ε(ρ) = exp(−(ε|ρ|)⁸) is flat near the base window's support
/// and shrinks as ε grows; past the invertibility threshold the condition
/// number blows up and the inversion is refused.
pub fn dual_window(w: &WindowFamily, eps: f64) -> Result<DualFamily> {
    if w.mode != WindowMode::Quantized {
        return Err(Error::InvalidInput(
            "dual construction needs a Quantized-mode window family".into(),
        ));
    }
    if eps <= 0.0 {
        return Err(Error::InvalidInput("shrink parameter must be positive".into()));
    }
    let grid = symbol_grid(&w.pos)?;
    let tilde_sym = GridSymbol::sample(grid, w.pos.len(), "ExEstar", |rho| {
        let r2: f64 = rho.iter().map(|v| v * v).sum();
        Complex64::new((-(eps * eps * r2).powi(4)).exp(), 0.0)
    });
    let m_tilde = weyl_quantize(&tilde_sym, &w.pos)?;
    let m0 = weyl_quantize(&w.base, &w.pos)?;
    let p = &m_tilde * &m0;
    let np = p.nrows();
    let d = w.pos.len();
    let sizes: Vec<usize> = w.pos.iter().map(|ax| ax.n).collect();
    // Conjugating P by T(γ) rolls both indices by the position steps and
    // multiplies by e^{iγ_ξ(t_i − t_j)}; the γ_x-dependent phases cancel. The
    // lattice sum therefore factorizes into a rolled sum R and a phase mask W.
    let spatial_ranges: Vec<std::ops::Range<i64>> = w
        .pos
        .iter()
        .enumerate()
        .map(|(ax, spec)| {
            let c = spec.n as i64 / (2 * w.steps_x[ax]);
            -c..c
        })
        .collect();
    let mut r = DMatrix::<Complex64>::zeros(np, np);
    let decode = |flat: usize| -> Vec<usize> {
        let mut iv = vec![0usize; d];
        let mut rest = flat;
        for ax in (0..d).rev() {
            iv[ax] = rest % sizes[ax];
            rest /= sizes[ax];
        }
        iv
    };
    for cell in odometer(&spatial_ranges) {
        let rolls: Vec<i64> = (0..d).map(|ax| cell[ax] * w.steps_x[ax]).collect();
        for i in 0..np {
            let iv = decode(i);
            let mut si = 0usize;
            for ax in 0..d {
                let v = (iv[ax] as i64 - rolls[ax]).rem_euclid(sizes[ax] as i64) as usize;
                si = si * sizes[ax] + v;
            }
            for j in 0..np {
                let jv = decode(j);
                let mut sj = 0usize;
                for ax in 0..d {
                    let v = (jv[ax] as i64 - rolls[ax]).rem_euclid(sizes[ax] as i64) as usize;
                    sj = sj * sizes[ax] + v;
                }
                r[(i, j)] += p[(si, sj)];
            }
        }
    }
    let mut axis_masks: Vec<DMatrix<Complex64>> = Vec::with_capacity(d);
    for (ax, spec) in w.pos.iter().enumerate() {
        let n_ax = spec.n;
        let dxi = spec.dual().spacing();
        let c = n_ax as i64 / (2 * w.steps_xi[ax]);
        let mut mask = DMatrix::<Complex64>::zeros(n_ax, n_ax);
        for i in 0..n_ax {
            for j in 0..n_ax {
                let delta = spec.coord(i) - spec.coord(j);
                let mut s = Complex64::new(0.0, 0.0);
                for q in -c..c {
                    let gxi = q as f64 * w.steps_xi[ax] as f64 * dxi;
                    s += Complex64::from_polar(1.0, gxi * delta);
                }
                mask[(i, j)] = s;
            }
        }
        axis_masks.push(mask);
    }
    let mut s_op = DMatrix::<Complex64>::zeros(np, np);
    for i in 0..np {
        let iv = decode(i);
        for j in 0..np {
            let jv = decode(j);
            let mut wij = Complex64::new(1.0, 0.0);
            for ax in 0..d {
                wij *= axis_masks[ax][(iv[ax], jv[ax])];
            }
            s_op[(i, j)] = r[(i, j)] * wij;
        }
    }
    let svals = s_op.clone().svd(false, false).singular_values;
    let smax = svals.iter().cloned().fold(0.0, f64::max);
    let smin = svals.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if smin <= 0.0 { f64::INFINITY } else { smax / smin };
    if condition > 1e8 {
        return Err(Error::IllConditioned {
            cond: condition,
            hint: "frame operator nearly singular; shrink ε so the companion window widens".into(),
        });
    }
    let inverse = s_op
        .clone()
        .try_inverse()
        .ok_or(Error::IllConditioned {
            cond: condition,
            hint: "frame operator not invertible".into(),
        })?;
    let mut residual: f64 = 0.0;
    let check = &inverse * &s_op;
    for i in 0..np {
        for j in 0..np {
            let want = if i == j { 1.0 } else { 0.0 };
            residual = residual.max((check[(i, j)] - Complex64::new(want, 0.0)).norm());
        }
    }
    Ok(DualFamily {
        window: w.clone(),
        eps,
        inverse,
        tilde: m_tilde,
        condition,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::order_functions::OrderFunction;
    use crate::quantize::translate_samples;

    fn gaussian_on_e(pos: &[AxisSpec], rate: f64) -> GridSymbol {
        GridSymbol::sample(Grid::new(pos.to_vec()), pos.len(), "E", |x| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            Complex64::new((-rate * r2).exp(), 0.0)
        })
    }

    fn xi_decay(dim: usize, power: f64) -> OrderFunction {
        let d = dim / 2;
        OrderFunction::slot_bracket_power(dim, d, dim, &vec![0.0; d], -power)
    }

    #[test]
    fn partition_translates_sum_to_one() {
        let pos = vec![AxisSpec::new(16, 6.0).unwrap(); 2];
        let w = build_partition(&pos, &[4, 4], &[4, 4], 1.0).unwrap();
        assert!(w.partition, "residual {}", w.partition_residual);
        assert!(w.partition_residual <= 1e-10);
        assert_eq!(w.base.grid.dim(), 4);
    }

    #[test]
    fn window_peaks_at_origin_with_gaussian_decay() {
        let axes = vec![AxisSpec::new(24, 6.0).unwrap(); 2];
        // step 2 · h = 1.0: the integer lattice ℤ².
        let w = build_spatial_partition(&axes, &[2, 2], 1.0).unwrap();
        assert!(w.partition);
        let mid = axes[0].n / 2;
        let at0 = w.base.values[IxDyn(&[mid, mid])].re;
        assert!(at0 > 0.0 && at0 < 1.0, "χ₀(0) = {at0}");
        // log χ₀ against |ρ|² along one axis: Gaussian-order decay means a
        // positive slope of −log χ₀ / ρ².
        let prof = &w.profiles[0];
        let coords = axes[0].coords();
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &t) in coords.iter().enumerate() {
            if t.abs() > 1.0 && t.abs() <= 4.0 && prof[i] > 0.0 {
                num += -(prof[i].ln()) * t * t;
                den += t * t * t * t;
            }
        }
        let c = num / den;
        assert!(c > 0.0, "decay coefficient {c}");
    }

    #[test]
    fn too_narrow_width_is_refused() {
        let pos = vec![AxisSpec::new(16, 6.0).unwrap(); 2];
        let err = build_partition(&pos, &[4, 4], &[4, 4], 0.005).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn zero_symbol_has_zero_norm() {
        let pos = vec![AxisSpec::new(16, 6.0).unwrap(); 2];
        let w = build_partition(&pos, &[4, 4], &[4, 4], 1.0).unwrap();
        let a = GridSymbol::zeros(Grid::new(pos.clone()), 2, "E");
        let m = xi_decay(4, 4.0);
        let rep = stilde_norm(&a, &m, &w, 2.0).unwrap();
        assert_eq!(rep.norm, 0.0);
        assert!(rep.member);
    }

    #[test]
    fn fft_sweep_matches_direct_conjugation() {
        let pos = vec![AxisSpec::new(8, 5.0).unwrap(); 2];
        let w = build_partition(&pos, &[2, 2], &[2, 2], 1.0).unwrap();
        let a = gaussian_on_e(&pos, 1.5);
        let m = OrderFunction::constant(4, 1.0).unwrap();
        let field = quantized_ratio_field(&a, &m, &w, 2.0).unwrap();
        let m0 = window_matrix(&w.base, &w.pos).unwrap();
        let av = DVector::from_iterator(a.grid.len(), a.values.iter().cloned());
        let cellvol = a.grid.cell_volume();
        for (index, _, ratio, _) in &field.entries {
            let (gx, gxi) = w.lattice_point(index);
            let neg_gx: Vec<f64> = gx.iter().map(|v| -v).collect();
            let neg_gxi: Vec<f64> = gxi.iter().map(|v| -v).collect();
            let shifted = translate_samples(&w.pos, &neg_gx, &neg_gxi, &av).unwrap();
            let direct = vector_lp(&(&m0 * shifted), 2.0, cellvol);
            assert!(
                (direct - ratio).abs() <= 1e-12 * direct.max(1.0),
                "index {index:?}: direct {direct} vs sweep {ratio}"
            );
        }
    }

    fn main_family() -> (Vec<AxisSpec>, WindowFamily) {
        let pos = vec![AxisSpec::new(40, 5.0).unwrap(); 2];
        let w = build_partition(&pos, &[10, 10], &[4, 4], 1.0).unwrap();
        (pos, w)
    }

    #[test]
    fn gaussian_is_a_member_for_every_tested_decay_order() {
        let (pos, w) = main_family();
        let a = gaussian_on_e(&pos, 1.0);
        for power in [0.0, 2.0, 6.0] {
            let m = xi_decay(4, power);
            let rep = stilde_norm(&a, &m, &w, 2.0).unwrap();
            assert!(rep.norm.is_finite() && rep.norm > 0.0);
            assert!(
                rep.member,
                "power {power}: edge fraction {}",
                rep.edge_fraction
            );
        }
    }

    #[test]
    fn piece_norm_choice_moves_the_constant_boundedly() {
        let (pos, w) = main_family();
        let a = gaussian_on_e(&pos, 1.0);
        let m = xi_decay(4, 4.0);
        let r2 = stilde_norm(&a, &m, &w, 2.0).unwrap();
        let rinf = stilde_norm(&a, &m, &w, f64::INFINITY).unwrap();
        let ratio = r2.norm / rinf.norm;
        assert!(
            (1e-2..=1e2).contains(&ratio),
            "L² vs L^∞ constant ratio {ratio}"
        );
        assert_eq!(r2.member, rinf.member);
    }

    #[test]
    fn clean_edge_concentration_is_flagged() {
        let (pos, w) = main_family();
        // Spectral content parked on the outermost trusted frequency ring.
        let q = 16.0 * pos[0].dual().spacing();
        let a = GridSymbol::sample(Grid::new(pos.clone()), 2, "E", |x| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            Complex64::new((q * x[0]).cos() * (-r2).exp(), 0.0)
        });
        let m = xi_decay(4, 2.0);
        let rep = stilde_norm(&a, &m, &w, 2.0).unwrap();
        assert!(!rep.member, "edge fraction {}", rep.edge_fraction);
        assert!(rep.edge_fraction > EDGE_DECAY_MAX);
    }

    #[test]
    fn norm_is_stable_across_lattices_and_widths() {
        let pos = vec![AxisSpec::new(48, 6.0).unwrap(); 2];
        let a = GridSymbol::sample(Grid::new(pos.clone()), 2, "E", |x| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            Complex64::from_polar((-r2).exp(), x[0])
        });
        let m = xi_decay(4, 4.0);
        let mut norms = Vec::new();
        for (kxi, width) in [(4i64, 1.0), (6, 1.0), (4, 1.7)] {
            let w = build_partition(&pos, &[8, 8], &[kxi, kxi], width).unwrap();
            let rep = stilde_norm(&a, &m, &w, 2.0).unwrap();
            assert!(rep.member, "kξ {kxi} width {width}");
            norms.push(rep.norm);
        }
        for i in 0..norms.len() {
            for j in 0..norms.len() {
                let q = norms[i] / norms[j];
                assert!((1.0 / 50.0..=50.0).contains(&q), "ratio {q}");
            }
        }
    }

    #[test]
    fn norm_axioms_hold_on_the_aggregation() {
        let pos = vec![AxisSpec::new(16, 6.0).unwrap(); 2];
        let w = build_partition(&pos, &[4, 4], &[4, 4], 1.0).unwrap();
        let m = xi_decay(4, 2.0);
        let a = gaussian_on_e(&pos, 1.0);
        let b = GridSymbol::sample(Grid::new(pos.clone()), 2, "E", |x| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            Complex64::new(x[0] * (-r2).exp(), 0.0)
        });
        let mut scaled = a.clone();
        scaled.values.mapv_inplace(|z| 2.0 * z);
        let mut sum = a.clone();
        sum.values = &a.values + &b.values;
        let na = stilde_norm(&a, &m, &w, 2.0).unwrap().norm;
        let nb = stilde_norm(&b, &m, &w, 2.0).unwrap().norm;
        let n2a = stilde_norm(&scaled, &m, &w, 2.0).unwrap().norm;
        let nsum = stilde_norm(&sum, &m, &w, 2.0).unwrap().norm;
        assert!((n2a - 2.0 * na).abs() <= 1e-12 * na);
        assert!(nsum <= na + nb + 1e-12 * (na + nb));
    }

    #[test]
    fn transform_route_certifies_flat_and_modulated_symbols() {
        let axes = vec![AxisSpec::new(64, 6.0).unwrap(); 2];
        let w = build_spatial_partition(&axes, &[8, 8], 1.0).unwrap();
        assert!(w.partition);
        let grid = Grid::new(axes.clone());
        let one = GridSymbol::sample(grid.clone(), 2, "E", |_| Complex64::new(1.0, 0.0));
        let m = xi_decay(4, 4.0);
        let rep = stft_membership(&one, &m, &w, None).unwrap();
        assert!(rep.member && rep.norm.is_finite() && rep.norm > 0.0);

        let zero = GridSymbol::zeros(grid.clone(), 2, "E");
        let rep0 = stft_membership(&zero, &m, &w, None).unwrap();
        assert_eq!(rep0.norm, 0.0);

        // Modulation moves the spectrum: member exactly when m recenters.
        let dxi = axes[0].dual().spacing();
        let eta = 6.0 * dxi;
        let modulated = GridSymbol::sample(grid, 2, "E", |x| Complex64::from_polar(1.0, eta * x[0]));
        let m_shifted = OrderFunction::slot_bracket_power(4, 2, 4, &[eta, 0.0], -4.0);
        let rep_shift = stft_membership(&modulated, &m_shifted, &w, None).unwrap();
        assert!(rep_shift.member);

        let eta_far = 11.0 * dxi;
        let far = GridSymbol::sample(Grid::new(axes.clone()), 2, "E", |x| {
            Complex64::from_polar(1.0, eta_far * x[0])
        });
        let cap = [6.283, 6.283];
        let rep_far = stft_membership(&far, &m, &w, Some(&cap)).unwrap();
        assert!(!rep_far.member, "edge fraction {}", rep_far.edge_fraction);
    }

    #[test]
    fn lattice_and_transform_verdicts_agree() {
        let (pos, w_lat) = main_family();
        let axes = vec![AxisSpec::new(64, 5.0).unwrap(); 2];
        let w_stft = build_spatial_partition(&axes, &[8, 8], 1.0).unwrap();
        // Both routes certify over the same frequency region: the clean cell
        // edge of the quantized lattice.
        let cap_val = 16.0 * pos[0].dual().spacing();
        let cap = [cap_val, cap_val];
        let m = xi_decay(4, 4.0);
        let eta = 4.0 * pos[0].dual().spacing();
        let cases: Vec<Box<dyn Fn(&[f64]) -> Complex64>> = vec![
            Box::new(|x: &[f64]| {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                Complex64::new((-r2).exp(), 0.0)
            }),
            Box::new(move |x: &[f64]| {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                Complex64::from_polar((-r2).exp(), eta * x[0])
            }),
            Box::new(move |x: &[f64]| {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                Complex64::new((cap_val * x[0]).cos() * (-r2).exp(), 0.0)
            }),
        ];
        let expected = [true, true, false];
        for (i, f) in cases.iter().enumerate() {
            let a_lat = GridSymbol::sample(Grid::new(pos.clone()), 2, "E", f);
            let a_stft = GridSymbol::sample(Grid::new(axes.clone()), 2, "E", f);
            let v_lat = stilde_norm(&a_lat, &m, &w_lat, 2.0).unwrap().member;
            let v_stft = stft_membership(&a_stft, &m, &w_stft, Some(&cap))
                .unwrap()
                .member;
            assert_eq!(v_lat, v_stft, "case {i}");
            assert_eq!(v_lat, expected[i], "case {i}");
        }
    }

    #[test]
    fn sequence_space_aggregation_extends_the_sup_route() {
        let pos = vec![AxisSpec::new(16, 6.0).unwrap(); 2];
        let w = build_partition(&pos, &[4, 4], &[4, 4], 1.0).unwrap();
        let a = gaussian_on_e(&pos, 1.0);
        let m = xi_decay(4, 4.0);
        let sup = stilde_norm(&a, &m, &w, 2.0).unwrap();
        let linf = bspace_stilde_norm(&a, &m, &w, &SeqSpaceSpec::lp(f64::INFINITY).unwrap()).unwrap();
        assert_eq!(linf.norm, sup.norm);
        let l1 = bspace_stilde_norm(&a, &m, &w, &SeqSpaceSpec::lp(1.0).unwrap()).unwrap();
        assert!(l1.norm.is_finite());
        assert!(linf.norm <= l1.norm);
    }

    #[test]
    fn dual_family_resolves_the_identity() {
        let pos = vec![AxisSpec::new(16, 6.0).unwrap(); 2];
        let w = build_partition(&pos, &[4, 4], &[4, 4], 1.0).unwrap();
        let dual = dual_window(&w, 0.2).unwrap();
        assert!(dual.residual <= 1e-6, "residual {}", dual.residual);
        assert!(dual.condition.is_finite());

        // Reconstruction through the explicit lattice sum, exercising the
        // translated operators rather than the factorized frame matrix.
        let a = gaussian_on_e(&pos, 1.0);
        let av = DVector::from_iterator(a.grid.len(), a.values.iter().cloned());
        let m0 = weyl_quantize(&w.base, &w.pos).unwrap();
        let m_tilde = &dual.tilde;
        let mut acc = DVector::<Complex64>::zeros(av.len());
        for index in odometer(&w.cell_ranges()) {
            let (gx, gxi) = w.lattice_point(&index);
            let neg_gx: Vec<f64> = gx.iter().map(|v| -v).collect();
            let neg_gxi: Vec<f64> = gxi.iter().map(|v| -v).collect();
            let down = translate_samples(&w.pos, &neg_gx, &neg_gxi, &av).unwrap();
            let cut = m_tilde * (&m0 * down);
            let up = translate_samples(&w.pos, &gx, &gxi, &cut).unwrap();
            acc += up;
        }
        let rec = &dual.inverse * acc;
        let err = (&rec - &av).norm() / av.norm();
        assert!(err <= 1e-6, "reconstruction error {err}");

        let psi = dual.psi_op(&[1, 0, -1, 0]).unwrap();
        assert!(psi.iter().all(|z| z.norm().is_finite()));
    }

    #[test]
    fn overshrunk_companion_window_is_refused() {
        let pos = vec![AxisSpec::new(16, 6.0).unwrap(); 2];
        let w = build_partition(&pos, &[4, 4], &[4, 4], 1.0).unwrap();
        let err = dual_window(&w, 10.0).unwrap_err();
        assert!(matches!(err, Error::IllConditioned { .. }), "{err:?}");
    }
}

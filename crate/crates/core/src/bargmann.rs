//! Gaussian-phase transform to weighted functions on ℂⁿ and the operator
//! kernels it induces.
//!
//! The transform Tu(x) = C ∫ e^{iφ(x,y)} u(y) dy with a quadratic phase φ
//! maps L²(ℝⁿ) unitarily onto holomorphic functions square-integrable
//! against e^{−2Φ}, where Φ(x) = sup_y −Im φ(x,y). Everything here is
//! stored pre-weighted by e^{−Φ}: raw holomorphic values grow like e^{+Φ}
//! and overflow, while every quantity of interest (norms, kernels,
//! membership ratios) only involves the weighted values, whose building
//! blocks e^{iφ−Φ} have modulus ≤ 1 by construction.
//!
//! The canonical choice is φ(x,y) = i(x−y)²/2 per axis, giving
//! Φ(x) = (Im x)²/2 and the identification ι: (y, η) ↦ y − iη of the real
//! phase space with ℂⁿ. Real phase-space geometry (chords, order-function
//! arguments) always enters through that identification.
//!
//! An operator a^w on L²(ℝⁿ) becomes, after conjugation by T, an integral
//! operator against e^{−2Φ}; its weighted kernel
//! K^eff(x,y) = e^{−Φ(x)} K(x, ȳ) e^{−Φ(y)} is bounded, concentrated near
//! the diagonal, and composes by plain (unweighted) integration over ℂⁿ.
//! [`EffectiveKernel`] keeps the dressed position-grid matrix of that
//! construction and evaluates K^eff at arbitrary phase-space pairs.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use ndarray::{ArrayD, IxDyn};
use num_complex::Complex64;

use crate::bspaces::{self, SeqFn, SeqSpaceSpec};
use crate::error::{Error, Result};
use crate::grid::{AxisSpec, Grid, GridSymbol};
use crate::order_functions::{self, AffineMap, OrderFunction};
use crate::phase_space::SymplecticSpace;
use crate::quadrature;
use crate::quantize::{symbol_grid, weyl_quantize};
use crate::symbol_class::{MembershipReport, RatioField, EDGE_DECAY_MAX};

/// Position-grid inputs must decay to this fraction of their peak at the
/// box faces; the transform integral is otherwise visibly truncated.
const POSITION_DECAY: f64 = 1e-12;

/// Pointwise tolerance for the setup's internal geometry checks.
const GEOMETRY_TOL: f64 = 1e-10;

/// Reference grids used once per axis to calibrate the unitarity constant.
const CAL_POS: (usize, f64) = (128, 9.0);
const CAL_CPLX: (usize, f64) = (48, 9.0);

/// Quadratic-phase transform data: the phase blocks of
/// φ(x,y) = ½x·φ_xx x + x·φ_xy y + ½y·φ_yy y, the induced weight Φ, the
/// identification of the real phase space with ℂⁿ, and the per-axis
/// normalization making the transform unitary.
///
/// Only separable (diagonal-block) phases are supported; each axis then
/// carries an independent scalar phase and the transform factors.
#[derive(Debug, Clone)]
pub struct BargmannSetup {
    pub n: usize,
    pub phase_xx: DMatrix<Complex64>,
    pub phase_xy: DMatrix<Complex64>,
    pub phase_yy: DMatrix<Complex64>,
    /// Unitarity constant per axis; the full normalization is their product.
    pub axis_norms: Vec<f64>,
    /// Φ(x) = ½ vᵀWv on v = (Re x, Im x).
    pub weight: DMatrix<f64>,
    /// Per-axis (caa, cab, cbb) with Φ_ax(a,b) = ½(caa·a² + 2cab·ab + cbb·b²).
    phi_coeffs: Vec<[f64; 3]>,
    /// Real-linear map (y, η) ↦ (Re x, Im x) realizing the projection of the
    /// canonical transformation onto ℂⁿ.
    pub iota: AffineMap,
    iota_inv: AffineMap,
}

/// Per-axis supremum of −Im φ_ax(z, ·) over real y, for z = a + ib.
/// Strict concavity in y (Im γ > 0) puts the maximum at y* = −Im(βz)/Im γ.
fn phi_axis(alpha: Complex64, beta: Complex64, gamma: Complex64, a: f64, b: f64) -> f64 {
    let z = Complex64::new(a, b);
    let ys = -(beta * z).im / gamma.im;
    let val = 0.5 * alpha * z * z + beta * z * ys + Complex64::new(0.5 * gamma.re * ys * ys, 0.5 * gamma.im * ys * ys);
    -val.im
}

/// Deterministic low-discrepancy samples in [−r, r]^d for geometry checks.
fn probe_points(d: usize, r: f64, count: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(count);
    let mut state = 0.5f64;
    for _ in 0..count {
        let mut p = Vec::with_capacity(d);
        for _ in 0..d {
            state = (state * 997.0 + 0.618_033_988_749_894_8).fract();
            p.push((2.0 * state - 1.0) * r);
        }
        out.push(p);
    }
    out
}

impl BargmannSetup {
    /// Phase with the canonical per-axis form i(x−y)²/2, giving
    /// Φ(x) = (Im x)²/2 and ι(y, η) = (y, −η).
    pub fn standard(n: usize) -> Result<Self> {
        let i = Complex64::new(0.0, 1.0);
        let xx = DMatrix::from_diagonal_element(n, n, i);
        let xy = DMatrix::from_diagonal_element(n, n, -i);
        let yy = DMatrix::from_diagonal_element(n, n, i);
        Self::new(xx, xy, yy)
    }

    pub fn new(
        phase_xx: DMatrix<Complex64>,
        phase_xy: DMatrix<Complex64>,
        phase_yy: DMatrix<Complex64>,
    ) -> Result<Self> {
        let n = phase_xx.nrows();
        if n == 0 {
            return Err(Error::InvalidInput("phase must have at least one axis".into()));
        }
        for (name, m) in [
            ("x²", &phase_xx),
            ("xy", &phase_xy),
            ("y²", &phase_yy),
        ] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::DimensionMismatch(format!(
                    "phase block {name} is {}×{}, expected {n}×{n}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            for r in 0..n {
                for c in 0..n {
                    if r != c && m[(r, c)].norm() > 1e-14 {
                        return Err(Error::InvalidInput(
                            "phase blocks must be diagonal; only separable transforms are supported"
                                .into(),
                        ));
                    }
                }
            }
        }
        for ax in 0..n {
            if phase_xy[(ax, ax)].norm() < 1e-12 {
                return Err(Error::InvalidInput(
                    "mixed phase block is singular on an axis".into(),
                ));
            }
            if phase_yy[(ax, ax)].im <= 0.0 {
                return Err(Error::InvalidInput(
                    "Im of the y² phase block must be positive definite".into(),
                ));
            }
        }

        let mut weight = DMatrix::<f64>::zeros(2 * n, 2 * n);
        let mut phi_coeffs = Vec::with_capacity(n);
        for ax in 0..n {
            let (al, be, ga) = (phase_xx[(ax, ax)], phase_xy[(ax, ax)], phase_yy[(ax, ax)]);
            let p10 = phi_axis(al, be, ga, 1.0, 0.0);
            let p01 = phi_axis(al, be, ga, 0.0, 1.0);
            let p11 = phi_axis(al, be, ga, 1.0, 1.0);
            let (caa, cbb, cab) = (2.0 * p10, 2.0 * p01, p11 - p10 - p01);
            weight[(ax, ax)] = caa;
            weight[(n + ax, n + ax)] = cbb;
            weight[(ax, n + ax)] = cab;
            weight[(n + ax, ax)] = cab;
            phi_coeffs.push([caa, cab, cbb]);
        }

        // ι from the canonical transformation: x solves −∂_y φ(x, y) = η.
        let mut iota_mat = vec![vec![0.0; 2 * n]; 2 * n];
        for k in 0..2 * n {
            let mut yh = vec![0.0; 2 * n];
            yh[k] = 1.0;
            let (y, eta) = yh.split_at(n);
            for ax in 0..n {
                let x = -(Complex64::new(eta[ax], 0.0) + phase_yy[(ax, ax)] * y[ax])
                    / phase_xy[(ax, ax)];
                iota_mat[ax][k] = x.re;
                iota_mat[n + ax][k] = x.im;
            }
        }
        let iota = AffineMap::new(iota_mat.clone(), vec![0.0; 2 * n])?;
        let lin = iota.linear();
        let inv = lin.clone().try_inverse().ok_or_else(|| Error::IllConditioned {
            cond: f64::INFINITY,
            hint: "phase-space identification is singular".into(),
        })?;
        let inv_rows: Vec<Vec<f64>> = (0..2 * n)
            .map(|r| (0..2 * n).map(|c| inv[(r, c)]).collect())
            .collect();
        let iota_inv = AffineMap::new(inv_rows, vec![0.0; 2 * n])?;

        let mut setup = BargmannSetup {
            n,
            phase_xx,
            phase_xy,
            phase_yy,
            axis_norms: vec![1.0; n],
            weight,
            phi_coeffs,
            iota,
            iota_inv,
        };
        setup.validate_geometry()?;
        setup.calibrate()?;
        Ok(setup)
    }

    /// Φ on v = (Re x, Im x).
    pub fn phi(&self, v: &[f64]) -> f64 {
        let mut s = 0.0;
        for r in 0..2 * self.n {
            for c in 0..2 * self.n {
                s += v[r] * self.weight[(r, c)] * v[c];
            }
        }
        0.5 * s
    }

    fn axis_phase(&self, ax: usize) -> (Complex64, Complex64, Complex64) {
        (
            self.phase_xx[(ax, ax)],
            self.phase_xy[(ax, ax)],
            self.phase_yy[(ax, ax)],
        )
    }

    /// iφ_ax(z, t) − Φ_ax(z); real part ≤ 0 for every real t.
    fn dressing(&self, ax: usize, z: Complex64, t: f64) -> Complex64 {
        let (al, be, ga) = self.axis_phase(ax);
        let [caa, cab, cbb] = self.phi_coeffs[ax];
        let phi = 0.5 * (caa * z.re * z.re + 2.0 * cab * z.re * z.im + cbb * z.im * z.im);
        Complex64::i() * (0.5 * al * z * z + be * z * t + 0.5 * ga * t * t) - phi
    }

    /// The frequency coordinate paired with x on the graph of Φ:
    /// (2/i)∂Φ/∂x = −i ∂_aΦ − ∂_bΦ, evaluated per axis.
    fn graph_xi(&self, v: &[f64]) -> Vec<Complex64> {
        let n = self.n;
        let mut grad = vec![0.0; 2 * n];
        for r in 0..2 * n {
            for c in 0..2 * n {
                grad[r] += self.weight[(r, c)] * v[c];
            }
        }
        (0..n)
            .map(|ax| Complex64::new(-grad[n + ax], -grad[ax]))
            .collect()
    }

    /// Image of a real phase-space point under the canonical transformation:
    /// the ℂⁿ point together with its paired frequency.
    fn kappa(&self, y: &[f64], eta: &[f64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let n = self.n;
        let mut x = Vec::with_capacity(n);
        for ax in 0..n {
            x.push(
                -(Complex64::new(eta[ax], 0.0) + self.phase_yy[(ax, ax)] * y[ax])
                    / self.phase_xy[(ax, ax)],
            );
        }
        let xi: Vec<Complex64> = (0..n)
            .map(|ax| self.phase_xx[(ax, ax)] * x[ax] + self.phase_xy[(ax, ax)] * y[ax])
            .collect();
        (x, xi)
    }

    /// ι applied to (y, η), as interleaved (re.., im..) coordinates.
    pub fn iota_point(&self, rho: &[f64]) -> Vec<f64> {
        self.iota.apply(rho)
    }

    /// ι⁻¹ applied to (re.., im..) coordinates of a ℂⁿ point.
    pub fn iota_inverse_point(&self, z: &[f64]) -> Vec<f64> {
        self.iota_inv.apply(z)
    }

    /// The stored weight must reproduce sup_y −Im φ, the canonical
    /// transformation must land on the graph of Φ, and ι must be its
    /// projection. All checked pointwise on deterministic samples.
    fn validate_geometry(&self) -> Result<()> {
        let n = self.n;
        for p in probe_points(2 * n, 3.0, 14) {
            let mut total = 0.0;
            for ax in 0..n {
                let (al, be, ga) = self.axis_phase(ax);
                let sup = phi_axis(al, be, ga, p[ax], p[n + ax]);
                total += sup;
                // concavity spot check: perturbing y away from the critical
                // point must not increase −Im φ
                let z = Complex64::new(p[ax], p[n + ax]);
                let ys = -(be * z).im / ga.im;
                for dy in [0.37, -1.3] {
                    let y = ys + dy;
                    let v = 0.5 * al * z * z + be * z * y + 0.5 * ga * y * y;
                    if -v.im > sup + 1e-12 {
                        return Err(Error::InvalidInput(
                            "weight does not dominate −Im φ off the critical point".into(),
                        ));
                    }
                }
            }
            if (total - self.phi(&p)).abs() > GEOMETRY_TOL {
                return Err(Error::InvalidInput(format!(
                    "stored weight deviates from sup_y −Im φ by {:.3e}",
                    (total - self.phi(&p)).abs()
                )));
            }
        }
        for rho in probe_points(2 * n, 2.0, 14) {
            let (y, eta) = rho.split_at(n);
            let (x, xi) = self.kappa(y, eta);
            let mut v = Vec::with_capacity(2 * n);
            v.extend(x.iter().map(|z| z.re));
            v.extend(x.iter().map(|z| z.im));
            let target = self.graph_xi(&v);
            for ax in 0..n {
                if (xi[ax] - target[ax]).norm() > GEOMETRY_TOL {
                    return Err(Error::InvalidInput(format!(
                        "canonical transformation misses the weight graph by {:.3e}",
                        (xi[ax] - target[ax]).norm()
                    )));
                }
            }
            let via_iota = self.iota.apply(&rho);
            for k in 0..2 * n {
                if (via_iota[k] - v[k]).abs() > GEOMETRY_TOL {
                    return Err(Error::InvalidInput(
                        "identification map disagrees with the canonical transformation".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Fix each axis norm so that the reference ground state keeps its L²
    /// norm through the transform; closed forms are never consulted.
    fn calibrate(&mut self) -> Result<()> {
        let pos = AxisSpec::new(CAL_POS.0, CAL_POS.1)?;
        let re = AxisSpec::new(CAL_CPLX.0, CAL_CPLX.1)?;
        let ts = pos.coords();
        let u0: Vec<f64> = ts
            .iter()
            .map(|t| PI.powf(-0.25) * (-0.5 * t * t).exp())
            .collect();
        let h = pos.spacing();
        let norm_u = (u0.iter().map(|v| v * v).sum::<f64>() * h).sqrt();
        let aa = re.coords();
        for ax in 0..self.n {
            let mut acc = 0.0;
            for &a in &aa {
                for &b in &aa {
                    let z = Complex64::new(a, b);
                    let mut w = Complex64::new(0.0, 0.0);
                    for (j, &t) in ts.iter().enumerate() {
                        w += self.dressing(ax, z, t).exp() * u0[j];
                    }
                    acc += (w * h).norm_sqr();
                }
            }
            let norm_w = (acc * re.spacing() * re.spacing()).sqrt();
            if !(norm_w.is_finite() && norm_w > 0.0) {
                return Err(Error::InvalidInput(
                    "unitarity calibration produced a degenerate norm".into(),
                ));
            }
            self.axis_norms[ax] = norm_u / norm_w;
        }
        Ok(())
    }

    /// Product of the axis norms.
    pub fn normalization(&self) -> f64 {
        self.axis_norms.iter().product()
    }

    /// Weighted transform factor for one axis: rows run over the (re, im)
    /// node pairs of the complex axis, columns over position nodes. Entry
    /// C_ax·e^{iφ_ax(z,t) − Φ_ax(z)}·h; every modulus is ≤ C_ax·h.
    fn axis_kernel(&self, ax: usize, re: &AxisSpec, im: &AxisSpec, pos: &AxisSpec) -> Vec<Complex64> {
        let (aa, bb, ts) = (re.coords(), im.coords(), pos.coords());
        let scale = Complex64::new(self.axis_norms[ax] * pos.spacing(), 0.0);
        let mut out = Vec::with_capacity(aa.len() * bb.len() * ts.len());
        for &a in &aa {
            for &b in &bb {
                let z = Complex64::new(a, b);
                for &t in &ts {
                    out.push(self.dressing(ax, z, t).exp() * scale);
                }
            }
        }
        out
    }
}

/// Complex-axis pair (re, im) for each position axis: half the sample count
/// (floored at 16) over the same box, so the ℂⁿ grid covers the region the
/// canonical transformation maps the working box into.
pub fn default_complex_axes(pos: &[AxisSpec]) -> Result<Vec<AxisSpec>> {
    let mut re = Vec::with_capacity(pos.len());
    for ax in pos {
        re.push(AxisSpec::new((ax.n / 2).max(16), ax.extent)?);
    }
    let mut axes = re.clone();
    axes.extend(re);
    Ok(axes)
}

/// Samples of e^{−Φ}·v on a grid over ℂᵈ ≅ ℝ^{2d}; axes are ordered
/// (Re z₁.. Re z_d, Im z₁.. Im z_d). The stored object is always the
/// weighted value, never the raw exponential-growth one.
#[derive(Debug, Clone)]
pub struct WeightedGridFunction {
    pub grid: Grid,
    /// d = complex dimension; the grid has 2d axes.
    pub half: usize,
    /// Position axes the data came from; the adjoint returns to these.
    pub source: Vec<AxisSpec>,
    pub values: ArrayD<Complex64>,
}

impl WeightedGridFunction {
    pub fn new(grid: Grid, half: usize, source: Vec<AxisSpec>, values: ArrayD<Complex64>) -> Result<Self> {
        if grid.dim() != 2 * half {
            return Err(Error::DimensionMismatch(format!(
                "complex grid has {} axes, expected {}",
                grid.dim(),
                2 * half
            )));
        }
        if values.shape() != grid.shape().as_slice() {
            return Err(Error::DimensionMismatch(
                "value shape does not match the complex grid".into(),
            ));
        }
        Ok(WeightedGridFunction {
            grid,
            half,
            source,
            values,
        })
    }

    /// L² norm against Lebesgue measure on ℂᵈ.
    pub fn norm(&self) -> f64 {
        let cv = self.grid.cell_volume();
        (self.values.iter().map(|z| z.norm_sqr()).sum::<f64>() * cv).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

fn check_position_decay(u: &GridSymbol) -> Result<()> {
    let peak = u.max_abs();
    if peak == 0.0 {
        return Ok(());
    }
    let shape = u.grid.shape();
    let mut worst: f64 = 0.0;
    for idx in u.grid.indices() {
        if idx
            .iter()
            .enumerate()
            .any(|(ax, &i)| i == 0 || i + 1 == shape[ax])
        {
            worst = worst.max(u.values[IxDyn(&idx)].norm());
        }
    }
    if worst > POSITION_DECAY * peak {
        return Err(Error::InvalidInput(format!(
            "boundary samples reach {:.3e} of the peak; enlarge the position box",
            worst / peak
        )));
    }
    Ok(())
}

/// Contract the leading logical axis with each matrix in turn, appending the
/// produced axis at the back. Starting from shape [C₁..C_d] the result has
/// shape [R₁..R_d] in the same axis order.
fn chain_contract(mut cur: Vec<Complex64>, mats: &[(usize, usize, &[Complex64])]) -> Vec<Complex64> {
    for &(rows, cols, data) in mats {
        let rest = cur.len() / cols;
        let mut next = vec![Complex64::new(0.0, 0.0); rest * rows];
        for j in 0..cols {
            let src = &cur[j * rest..(j + 1) * rest];
            for r in 0..rows {
                let kv = data[r * cols + j];
                if kv.re == 0.0 && kv.im == 0.0 {
                    continue;
                }
                for (q, s) in src.iter().enumerate() {
                    next[q * rows + r] += kv * s;
                }
            }
        }
        cur = next;
    }
    cur
}

/// Reorder a flat [R₁..R_d] array with combined complex axes R = Mre·Mim
/// into (re₁..re_d, im₁..im_d) layout, or back.
fn regroup_complex(flat: &[Complex64], mre: &[usize], mim: &[usize], forward: bool) -> Vec<Complex64> {
    let d = mre.len();
    let total = flat.len();
    let mut out = vec![Complex64::new(0.0, 0.0); total];
    let mut idx = vec![0usize; 2 * d];
    // idx holds (ia₁..ia_d, ib₁..ib_d)
    for f in 0..total {
        let combined = f;
        let split: usize = {
            let mut rest = combined;
            for ax in (0..d).rev() {
                let r = mre[ax] * mim[ax];
                let c = rest % r;
                rest /= r;
                idx[ax] = c / mim[ax];
                idx[d + ax] = c % mim[ax];
            }
            let mut s = 0usize;
            for ax in 0..d {
                s = s * mre[ax] + idx[ax];
            }
            for ax in 0..d {
                s = s * mim[ax] + idx[d + ax];
            }
            s
        };
        if forward {
            out[split] = flat[f];
        } else {
            out[f] = flat[split];
        }
    }
    out
}

/// Tu stored as e^{−Φ}Tu on the given complex axes (re₁..re_d, im₁..im_d).
pub fn bargmann_transform_on(
    u: &GridSymbol,
    setup: &BargmannSetup,
    axes: &[AxisSpec],
) -> Result<WeightedGridFunction> {
    let d = setup.n;
    if u.grid.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "input lives on {} axes, transform is set up for {}",
            u.grid.dim(),
            d
        )));
    }
    if axes.len() != 2 * d {
        return Err(Error::DimensionMismatch(
            "need one (re, im) axis pair per position axis".into(),
        ));
    }
    check_position_decay(u)?;
    let pos = &u.grid.axes;
    let kernels: Vec<Vec<Complex64>> = (0..d)
        .map(|ax| setup.axis_kernel(ax, &axes[ax], &axes[d + ax], &pos[ax]))
        .collect();
    let mats: Vec<(usize, usize, &[Complex64])> = (0..d)
        .map(|ax| {
            (
                axes[ax].n * axes[d + ax].n,
                pos[ax].n,
                kernels[ax].as_slice(),
            )
        })
        .collect();
    let flat: Vec<Complex64> = u.values.iter().cloned().collect();
    let combined = chain_contract(flat, &mats);
    let mre: Vec<usize> = (0..d).map(|ax| axes[ax].n).collect();
    let mim: Vec<usize> = (0..d).map(|ax| axes[d + ax].n).collect();
    let split = regroup_complex(&combined, &mre, &mim, true);
    let grid = Grid::new(axes.to_vec());
    let values = ArrayD::from_shape_vec(IxDyn(&grid.shape()), split)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    WeightedGridFunction::new(grid, d, pos.clone(), values)
}

/// Tu on the default complex axes for u's grid.
pub fn bargmann_transform(u: &GridSymbol, setup: &BargmannSetup) -> Result<WeightedGridFunction> {
    let axes = default_complex_axes(&u.grid.axes)?;
    bargmann_transform_on(u, setup, &axes)
}

/// T*v back on the position grid the data came from. The adjoint of each
/// axis factor is its conjugate transpose with the quadrature measures
/// exchanged (position spacing out, complex cell area in), so T*T = 1 holds
/// to quadrature accuracy with no separate normalization.
pub fn bargmann_adjoint(v: &WeightedGridFunction, setup: &BargmannSetup) -> Result<GridSymbol> {
    let d = setup.n;
    if v.half != d {
        return Err(Error::DimensionMismatch(format!(
            "weighted data has complex dimension {}, transform is set up for {}",
            v.half, d
        )));
    }
    if v.source.len() != d {
        return Err(Error::InvalidInput(
            "weighted data carries no originating position axes".into(),
        ));
    }
    let pos = &v.source;
    let mre: Vec<usize> = (0..d).map(|ax| v.grid.axes[ax].n).collect();
    let mim: Vec<usize> = (0..d).map(|ax| v.grid.axes[d + ax].n).collect();
    let flat: Vec<Complex64> = v.values.iter().cloned().collect();
    let combined = regroup_complex(&flat, &mre, &mim, false);
    let mut adjoints: Vec<Vec<Complex64>> = Vec::with_capacity(d);
    for ax in 0..d {
        let fwd = setup.axis_kernel(ax, &v.grid.axes[ax], &v.grid.axes[d + ax], &pos[ax]);
        let rows = mre[ax] * mim[ax];
        let cols = pos[ax].n;
        let area = v.grid.axes[ax].spacing() * v.grid.axes[d + ax].spacing();
        let scale = area / pos[ax].spacing();
        let mut adj = vec![Complex64::new(0.0, 0.0); rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                adj[c * rows + r] = fwd[r * cols + c].conj() * scale;
            }
        }
        adjoints.push(adj);
    }
    let mats: Vec<(usize, usize, &[Complex64])> = (0..d)
        .map(|ax| (pos[ax].n, mre[ax] * mim[ax], adjoints[ax].as_slice()))
        .collect();
    let out = chain_contract(combined, &mats);
    let grid = Grid::new(pos.clone());
    let values = ArrayD::from_shape_vec(IxDyn(&grid.shape()), out)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    GridSymbol::new(grid, d, "position", values)
}

/// Weighted kernel of a quantized symbol: evaluation procedure for
/// K^eff(x,y) = e^{−Φ(x)} K(x, ȳ) e^{−Φ(y)} at real phase-space pairs,
/// after pulling both arguments through ι.
///
/// The dressed matrix is C²·hᵈ times the quantized operator; an evaluation
/// contracts it with per-axis dressing vectors on both sides, so it is pure
/// and thread-safe.
#[derive(Debug, Clone)]
pub struct EffectiveKernel {
    setup: BargmannSetup,
    /// Position sample coordinates per axis.
    nodes: Vec<Vec<f64>>,
    /// Half-widths of the position box per axis; also the integration
    /// half-widths used when composing kernels.
    box_half: Vec<f64>,
    dressed: DMatrix<Complex64>,
    pub majorant: Option<OrderFunction>,
}

impl EffectiveKernel {
    /// d: the operator acts on L²(ℝᵈ); arguments of eval live in ℝ^{2d}.
    pub fn half_dim(&self) -> usize {
        self.setup.n
    }

    fn dressing_vector(&self, z: &[f64]) -> Vec<Complex64> {
        let d = self.setup.n;
        let per_axis: Vec<Vec<Complex64>> = (0..d)
            .map(|ax| {
                let za = Complex64::new(z[ax], z[d + ax]);
                self.nodes[ax]
                    .iter()
                    .map(|&t| self.setup.dressing(ax, za, t).exp())
                    .collect()
            })
            .collect();
        let np: usize = self.nodes.iter().map(|n| n.len()).product();
        let mut out = Vec::with_capacity(np);
        let sizes: Vec<usize> = self.nodes.iter().map(|n| n.len()).collect();
        for f in 0..np {
            let mut rest = f;
            let mut v = Complex64::new(1.0, 0.0);
            for ax in (0..d).rev() {
                v *= per_axis[ax][rest % sizes[ax]];
                rest /= sizes[ax];
            }
            out.push(v);
        }
        out
    }

    /// K^eff at a pair of real phase-space points (each of dimension 2d).
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<Complex64> {
        let dim = 2 * self.setup.n;
        if x.len() != dim || y.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "kernel arguments live in dimension {dim}"
            )));
        }
        let zx = self.setup.iota.apply(x);
        let zy = self.setup.iota.apply(y);
        let vx = DVector::from_vec(self.dressing_vector(&zx));
        let vy = DVector::from_vec(
            self.dressing_vector(&zy)
                .into_iter()
                .map(|c| c.conj())
                .collect::<Vec<_>>(),
        );
        let t = &self.dressed * vy;
        Ok(vx.dot(&t))
    }

    pub fn with_majorant(mut self, m: OrderFunction) -> Result<Self> {
        if m.dim != 4 * self.setup.n {
            return Err(Error::DimensionMismatch(format!(
                "majorant has dimension {}, kernel chords live in dimension {}",
                m.dim,
                4 * self.setup.n
            )));
        }
        self.majorant = Some(m);
        Ok(self)
    }

    /// Coarse sample of K^eff on a product grid: the first 2d axes sweep x,
    /// the last 2d sweep y. Exportable through the usual grid file format.
    pub fn sample_grid(&self, axes: &[AxisSpec]) -> Result<GridSymbol> {
        let dim = 2 * self.setup.n;
        if axes.len() != 2 * dim {
            return Err(Error::DimensionMismatch(format!(
                "need {} axes for an (x, y) product grid",
                2 * dim
            )));
        }
        let grid = Grid::new(axes.to_vec());
        let mut values = ArrayD::zeros(IxDyn(&grid.shape()));
        for idx in grid.indices() {
            let p = grid.point(&idx);
            values[IxDyn(&idx)] = self.eval(&p[..dim], &p[dim..])?;
        }
        GridSymbol::new(grid, self.setup.n, "ExE", values)
    }
}

/// Effective kernel of a^w for a symbol on the doubled symbol grid of some
/// position axes (recovered from the grid layout). The distribution kernel
/// of a^w is transformed on both sides and weighted; concretely the
/// quantized matrix is dressed with e^{iφ−Φ} factors at evaluation time.
pub fn effective_kernel(a: &GridSymbol, setup: &BargmannSetup) -> Result<EffectiveKernel> {
    let d = setup.n;
    if a.grid.dim() != 2 * d {
        return Err(Error::DimensionMismatch(format!(
            "symbol grid has {} axes, the transform needs a doubled grid over {} position axes",
            a.grid.dim(),
            d
        )));
    }
    let mut pos = Vec::with_capacity(d);
    for ax in 0..d {
        pos.push(AxisSpec::new(a.grid.axes[d + ax].n, a.grid.axes[ax].extent)?);
    }
    if symbol_grid(&pos)?.axes != a.grid.axes {
        return Err(Error::InvalidInput(
            "symbol grid does not match the doubled grid of any position axes".into(),
        ));
    }
    let m = weyl_quantize(a, &pos)?;
    let c = setup.normalization();
    let hd: f64 = pos.iter().map(|ax| ax.spacing()).product();
    let dressed = m * Complex64::new(c * c * hd, 0.0);
    Ok(EffectiveKernel {
        setup: setup.clone(),
        nodes: pos.iter().map(|ax| ax.coords()).collect(),
        box_half: pos.iter().map(|ax| ax.extent).collect(),
        dressed,
        majorant: None,
    })
}

/// Magnetic translation on weighted data: x ↦ e^{i x₀*·(x+½x₀)} v(x+x₀),
/// which is unitary exactly when the linear form x₀*·x + x₀·ξ is real on
/// the graph of Φ. Both conditions are verified; the shift must lie on the
/// sample grid and wraps toroidally (weighted data decays, so the wrapped
/// mass is the caller's boundary tail).
pub fn magnetic_translate(
    v: &WeightedGridFunction,
    x0: &[Complex64],
    x0_star: &[f64],
    setup: &BargmannSetup,
) -> Result<WeightedGridFunction> {
    let d = setup.n;
    if v.half != d || x0.len() != d || x0_star.len() != d {
        return Err(Error::DimensionMismatch(
            "shift, covector and data must share the complex dimension".into(),
        ));
    }
    // reality of the linear form on the weight graph: its imaginary part is
    // linear in (re, im), so the extreme over the box sits at a corner
    let mut worst = (0.0f64, vec![0.0; 2 * d]);
    for mask in 0..(1usize << (2 * d)) {
        let p: Vec<f64> = (0..2 * d)
            .map(|k| {
                let l = v.grid.axes[k].extent;
                if mask >> k & 1 == 1 {
                    l
                } else {
                    -l
                }
            })
            .collect();
        let xi = setup.graph_xi(&p);
        let mut ell = Complex64::new(0.0, 0.0);
        for ax in 0..d {
            let z = Complex64::new(p[ax], p[d + ax]);
            ell += x0_star[ax] * z + x0[ax] * xi[ax];
        }
        if ell.im.abs() > worst.0 {
            worst = (ell.im.abs(), p);
        }
    }
    let scale = 1.0
        + x0.iter().map(|z| z.norm()).sum::<f64>()
        + x0_star.iter().map(|c| c.abs()).sum::<f64>();
    if worst.0 > GEOMETRY_TOL * scale {
        return Err(Error::InvalidInput(format!(
            "translation form is not real on the weight graph: Im = {:.3e} at {:?}",
            worst.0, worst.1
        )));
    }
    // weight-transfer identity; holds pointwise when the form is real
    let r: Vec<f64> = x0.iter().map(|z| z.re).collect();
    let s: Vec<f64> = x0.iter().map(|z| z.im).collect();
    let mut res_worst = 0.0f64;
    for idx in v.grid.indices() {
        let p = v.grid.point(&idx);
        let mut q = p.clone();
        for ax in 0..d {
            q[ax] += r[ax];
            q[d + ax] += s[ax];
        }
        let mut lin = 0.0;
        for ax in 0..d {
            lin += x0_star[ax] * (p[d + ax] + 0.5 * s[ax]);
        }
        let res = -setup.phi(&p) + setup.phi(&q) - lin;
        res_worst = res_worst.max(res.abs());
        if res_worst > GEOMETRY_TOL * (1.0 + setup.phi(&p).abs() + setup.phi(&q).abs()) {
            return Err(Error::InvalidInput(format!(
                "translated weight fails to cancel the multiplier: residual {res_worst:.3e}"
            )));
        }
    }
    // grid-aligned shift steps
    let mut steps = vec![0i64; 2 * d];
    for k in 0..2 * d {
        let shift = if k < d { r[k] } else { s[k - d] };
        let sp = v.grid.axes[k].spacing();
        let q = shift / sp;
        if (q - q.round()).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "shift component {shift:.6} is not a multiple of the sample spacing {sp:.6}"
            )));
        }
        steps[k] = q.round() as i64;
    }
    let shape = v.grid.shape();
    let mut values = ArrayD::zeros(IxDyn(&shape));
    for idx in v.grid.indices() {
        let src: Vec<usize> = (0..2 * d)
            .map(|k| (idx[k] as i64 + steps[k]).rem_euclid(shape[k] as i64) as usize)
            .collect();
        let p = v.grid.point(&idx);
        let mut theta = 0.0;
        for ax in 0..d {
            theta += x0_star[ax] * (p[ax] + 0.5 * r[ax]);
        }
        values[IxDyn(&idx)] = Complex64::from_polar(1.0, theta) * v.values[IxDyn(&src)];
    }
    WeightedGridFunction::new(v.grid.clone(), d, v.source.clone(), values)
}

/// Membership through the transform: ratios e^{−Φ(z)}|Tu(z)| / m(ι⁻¹(z))
/// over the complex grid, with the edge certificate watching the Im axes
/// (the frequency directions after ι⁻¹). With a sequence-space argument the
/// pointwise sup is replaced by the amalgam norm of per-unit-cell sups.
pub fn membership_via_bargmann(
    u: &GridSymbol,
    m: &OrderFunction,
    setup: &BargmannSetup,
    axes: Option<&[AxisSpec]>,
    seq: Option<&SeqSpaceSpec>,
) -> Result<MembershipReport> {
    let d = setup.n;
    if m.dim != 2 * d {
        return Err(Error::DimensionMismatch(format!(
            "order function has dimension {}, expected {}",
            m.dim,
            2 * d
        )));
    }
    let owned;
    let axes = match axes {
        Some(a) => a,
        None => {
            owned = default_complex_axes(&u.grid.axes)?;
            &owned
        }
    };
    let w = bargmann_transform_on(u, setup, axes)?;
    let caps: Vec<f64> = (0..d).map(|ax| axes[d + ax].extent).collect();
    let mut entries = Vec::new();
    for idx in w.grid.indices() {
        let z = w.grid.point(&idx);
        let rho = setup.iota_inv.apply(&z);
        let mval = m.eval(&rho);
        let ratio = w.values[IxDyn(&idx)].norm() / mval;
        let scaled = (0..d)
            .map(|ax| z[d + ax].abs() / caps[ax])
            .fold(0.0, f64::max);
        entries.push((
            idx.iter().map(|&i| i as i64).collect::<Vec<i64>>(),
            rho,
            ratio,
            scaled,
        ));
    }
    let field = RatioField { entries };
    match seq {
        None => Ok(field.report("bargmann", "sup")),
        Some(b) => {
            let mut per_cell: std::collections::HashMap<Vec<i64>, f64> =
                std::collections::HashMap::new();
            for (_, rho, ratio, _) in &field.entries {
                let key: Vec<i64> = rho.iter().map(|c| c.round() as i64).collect();
                let slot = per_cell.entry(key).or_insert(0.0);
                *slot = slot.max(*ratio);
            }
            let mut sf = SeqFn::new(2 * d);
            for (key, val) in per_cell {
                sf.set(key, Complex64::new(val, 0.0));
            }
            let norm = bspaces::seq_norm(&sf, b);
            let mut rep = field.report("bargmann", &format!("B:{}", serde_json::to_string(b)?));
            rep.norm = norm;
            rep.member = norm.is_finite() && (norm == 0.0 || rep.edge_fraction <= EDGE_DECAY_MAX);
            Ok(rep)
        }
    }
}

/// Composition of two effective kernels by integration of
/// K₁(x, z)K₂(z, y) over the complex box.
///
/// The z-integral of the two dressing factors separates per axis into a
/// Gaussian overlap in Re z (a closed erf form over the box) times a
/// Dirichlet factor 2 sin(LΔ)/Δ from the Im z range; the whole composition
/// is then a triple matrix product on the position grid. Attached majorants
/// must compose integrably. Only the canonical phase is supported, since
/// the separation of the z-integral relies on its form.
pub fn kernel_compose(k1: &EffectiveKernel, k2: &EffectiveKernel) -> Result<EffectiveKernel> {
    let d = k1.setup.n;
    if k2.setup.n != d || k1.nodes != k2.nodes {
        return Err(Error::DimensionMismatch(
            "kernels live on different position grids".into(),
        ));
    }
    for ax in 0..d {
        let (a1, b1, g1) = k1.setup.axis_phase(ax);
        let (a2, b2, g2) = k2.setup.axis_phase(ax);
        let i = Complex64::i();
        for (have, want) in [(a1, i), (b1, -i), (g1, i), (a2, i), (b2, -i), (g2, i)] {
            if (have - want).norm() > 1e-12 {
                return Err(Error::InvalidInput(
                    "kernel composition requires the canonical phase on every axis".into(),
                ));
            }
        }
    }
    if let (Some(m1), Some(m2)) = (&k1.majorant, &k2.majorant) {
        let space = SymplecticSpace::new(d)?;
        let zero = vec![0.0; 2 * d];
        let integrand = order_functions::compose_integrand(&space, m1, m2, &zero, &zero)?;
        let verdict = quadrature::integrable_on_rd(&integrand.tail_atoms(), 2 * d);
        if !verdict.integrable {
            return Err(Error::Divergent {
                what: "majorant composition",
                detail: format!(
                    "tail excess {:.3} on a {}-dimensional direction set",
                    verdict.worst_excess, verdict.worst_subspace_dim
                ),
            });
        }
    }
    let np: usize = k1.nodes.iter().map(|n| n.len()).collect::<Vec<_>>().iter().product();
    let sizes: Vec<usize> = k1.nodes.iter().map(|n| n.len()).collect();
    let mut axis_z: Vec<Vec<f64>> = Vec::with_capacity(d);
    for ax in 0..d {
        let t = &k1.nodes[ax];
        let l = k1.box_half[ax];
        let nn = t.len();
        let mut za = vec![0.0; nn * nn];
        for j in 0..nn {
            for k in 0..nn {
                let delta = t[k] - t[j];
                let mid = 0.5 * (t[j] + t[k]);
                let overlap = (-0.25 * delta * delta).exp()
                    * 0.5
                    * PI.sqrt()
                    * (libm::erf(l - mid) + libm::erf(l + mid));
                let dirichlet = if delta == 0.0 {
                    2.0 * l
                } else {
                    2.0 * (l * delta).sin() / delta
                };
                za[j * nn + k] = overlap * dirichlet;
            }
        }
        axis_z.push(za);
    }
    let mut z = DMatrix::<Complex64>::zeros(np, np);
    for j in 0..np {
        for k in 0..np {
            let (mut rj, mut rk) = (j, k);
            let mut prod = 1.0;
            for ax in (0..d).rev() {
                let nn = sizes[ax];
                prod *= axis_z[ax][(rj % nn) * nn + (rk % nn)];
                rj /= nn;
                rk /= nn;
            }
            z[(j, k)] = Complex64::new(prod, 0.0);
        }
    }
    let dressed = &k1.dressed * z * &k2.dressed;
    Ok(EffectiveKernel {
        setup: k1.setup.clone(),
        nodes: k1.nodes.clone(),
        box_half: k1.box_half.clone(),
        dressed,
        majorant: None,
    })
}

/// L²-normalized Hermite function h_k(y) = (2^k k! √π)^{−1/2} H_k(y) e^{−y²/2}.
pub fn hermite(k: usize, y: f64) -> f64 {
    let mut h_prev = 1.0f64;
    let mut h = 2.0 * y;
    if k == 0 {
        h = h_prev;
    } else {
        for j in 1..k {
            let next = 2.0 * y * h - 2.0 * j as f64 * h_prev;
            h_prev = h;
            h = next;
        }
    }
    let mut fact = 1.0f64;
    for j in 1..=k {
        fact *= j as f64;
    }
    let norm = (2.0f64.powi(k as i32) * fact * PI.sqrt()).sqrt();
    h * (-0.5 * y * y).exp() / norm
}

//! Solid, translation-invariant sequence spaces on lattices and the amalgam
//! and kernel machinery built on them.
//!
//! The built-in family is ℓ^p(Γ) and mixed ℓ^{p,q}(Γ₁×Γ₂) with exponents in
//! [1, ∞]. Norms are computed by sorting moduli before summation, so a
//! translated argument produces the bitwise-identical norm: translation
//! invariance holds exactly, not merely up to roundoff. Solidity holds with
//! constant 1, and ℓ¹ ⊂ B ⊂ ℓ^∞ with constant 1 on finitely supported input.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::grid::GridSymbol;
use crate::order_functions::OrderFunction;
use crate::phase_space::Lattice;

/// Exponent in [1, ∞]. Serializes as a number when finite and as the string
/// "inf" otherwise, since JSON has no infinity literal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exponent(pub f64);

impl Exponent {
    pub fn new(p: f64) -> Result<Self> {
        if p.is_nan() || p < 1.0 {
            return Err(Error::InvalidInput(format!(
                "exponent must lie in [1, ∞], got {p}"
            )));
        }
        Ok(Exponent(p))
    }

    pub fn is_infinite(&self) -> bool {
        self.0.is_infinite()
    }
}

impl Serialize for Exponent {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Exponent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Word(String),
        }
        let p = match Raw::deserialize(d)? {
            Raw::Num(p) => p,
            Raw::Word(w) if w == "inf" => f64::INFINITY,
            Raw::Word(w) => return Err(D::Error::custom(format!("bad exponent {w:?}"))),
        };
        Exponent::new(p).map_err(|e| D::Error::custom(e.to_string()))
    }
}

/// Member of the built-in space family. `Mixed` applies the inner exponent
/// `p` over the indices from `split` onward and the outer exponent `q` over
/// the first `split` indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SeqSpaceSpec {
    Lp { p: Exponent },
    Mixed { p: Exponent, q: Exponent, split: usize },
}

impl SeqSpaceSpec {
    pub fn lp(p: f64) -> Result<Self> {
        Ok(SeqSpaceSpec::Lp { p: Exponent::new(p)? })
    }

    pub fn mixed(p: f64, q: f64, split: usize) -> Result<Self> {
        Ok(SeqSpaceSpec::Mixed {
            p: Exponent::new(p)?,
            q: Exponent::new(q)?,
            split,
        })
    }

    /// Mixed form with both exponents explicit: ℓ^p = ℓ^{p,p} for any split.
    fn as_mixed(&self, split: usize) -> (f64, f64, usize) {
        match self {
            SeqSpaceSpec::Lp { p } => (p.0, p.0, split),
            SeqSpaceSpec::Mixed { p, q, split } => (p.0, q.0, *split),
        }
    }
}

/// Finitely supported function on ℤᵈ (lattice indices, not embedded points).
#[derive(Debug, Clone, Default)]
pub struct SeqFn {
    pub dim: usize,
    pub entries: HashMap<Vec<i64>, Complex64>,
}

impl SeqFn {
    pub fn new(dim: usize) -> Self {
        SeqFn {
            dim,
            entries: HashMap::new(),
        }
    }

    pub fn set(&mut self, idx: Vec<i64>, v: Complex64) {
        assert_eq!(idx.len(), self.dim, "index arity");
        if v == Complex64::new(0.0, 0.0) {
            self.entries.remove(&idx);
        } else {
            self.entries.insert(idx, v);
        }
    }

    pub fn get(&self, idx: &[i64]) -> Complex64 {
        self.entries
            .get(idx)
            .copied()
            .unwrap_or(Complex64::new(0.0, 0.0))
    }

    pub fn translate(&self, shift: &[i64]) -> SeqFn {
        assert_eq!(shift.len(), self.dim, "shift arity");
        let mut out = SeqFn::new(self.dim);
        for (idx, v) in &self.entries {
            let moved: Vec<i64> = idx.iter().zip(shift).map(|(a, s)| a + s).collect();
            out.entries.insert(moved, *v);
        }
        out
    }
}

/// Sum moduli^p in ascending order so permutations of the input produce the
/// identical floating-point result.
fn aggregate(mut vals: Vec<f64>, p: f64) -> f64 {
    if vals.is_empty() {
        return 0.0;
    }
    if p.is_infinite() {
        return vals.iter().fold(0.0f64, |m, v| m.max(*v));
    }
    for v in vals.iter_mut() {
        *v = v.powf(p);
    }
    vals.sort_by(f64::total_cmp);
    let s: f64 = vals.iter().sum();
    s.powf(1.0 / p)
}

pub fn seq_norm(u: &SeqFn, b: &SeqSpaceSpec) -> f64 {
    match b {
        SeqSpaceSpec::Lp { p } => aggregate(u.entries.values().map(|z| z.norm()).collect(), p.0),
        SeqSpaceSpec::Mixed { p, q, split } => {
            let mut groups: HashMap<&[i64], Vec<f64>> = HashMap::new();
            for (idx, v) in &u.entries {
                groups.entry(&idx[..*split]).or_default().push(v.norm());
            }
            let mut outer: Vec<f64> = groups
                .into_values()
                .map(|vals| aggregate(vals, p.0))
                .collect();
            // group iteration order is arbitrary; the outer aggregate sorts
            outer.sort_by(f64::total_cmp);
            aggregate(outer, q.0)
        }
    }
}

pub fn convolve(f: &SeqFn, u: &SeqFn) -> SeqFn {
    assert_eq!(f.dim, u.dim, "convolution needs equal arities");
    let mut out = SeqFn::new(f.dim);
    for (beta, fv) in &f.entries {
        for (gamma, uv) in &u.entries {
            let idx: Vec<i64> = beta.iter().zip(gamma).map(|(a, b)| a + b).collect();
            let e = out.entries.entry(idx).or_insert(Complex64::new(0.0, 0.0));
            *e += fv * uv;
        }
    }
    out.entries.retain(|_, v| *v != Complex64::new(0.0, 0.0));
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvolveReport {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// ‖f ∗ u‖_B ≤ ‖f‖_{ℓ¹} ‖u‖_B.
pub fn convolve_bound_check(f: &SeqFn, u: &SeqFn, b: &SeqSpaceSpec) -> ConvolveReport {
    let lhs = seq_norm(&convolve(f, u), b);
    let f1 = seq_norm(f, &SeqSpaceSpec::Lp { p: Exponent(1.0) });
    let rhs = f1 * seq_norm(u, b);
    ConvolveReport {
        lhs,
        rhs,
        holds: lhs <= rhs * (1.0 + 1e-12) + 1e-300,
    }
}

/// Kernels dominated by a convolution majorant: v(α) = Σ_β k(α,β)u(β) with
/// |k(α,β)| ≤ f(α−β) satisfies ‖v‖_B ≤ ‖f‖_{ℓ¹}‖u‖_B. Random dominated
/// kernels are sampled; the worst ratio over trials is reported.
pub fn dominated_kernel_check(
    f: &SeqFn,
    u: &SeqFn,
    b: &SeqSpaceSpec,
    trials: usize,
    seed: u64,
) -> ConvolveReport {
    let f1 = seq_norm(f, &SeqSpaceSpec::Lp { p: Exponent(1.0) });
    let rhs = f1 * seq_norm(u, b);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let mut v = SeqFn::new(u.dim);
        for (beta, uv) in &u.entries {
            for (delta, fv) in &f.entries {
                let alpha: Vec<i64> = beta.iter().zip(delta).map(|(b, d)| b + d).collect();
                let mag: f64 = rng.gen::<f64>();
                let arg: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
                let k = Complex64::from_polar(mag * fv.norm(), arg);
                let e = v.entries.entry(alpha).or_insert(Complex64::new(0.0, 0.0));
                *e += k * uv;
            }
        }
        worst = worst.max(seq_norm(&v, b));
    }
    ConvolveReport {
        lhs: worst,
        rhs,
        holds: worst <= rhs * (1.0 + 1e-12) + 1e-300,
    }
}

/// Rule-table verdict for the domination order on the built-in family:
/// ℓ^p before ℓ^q iff p ≤ q, mixed spaces componentwise. `None` when the two
/// specs are structurally incomparable (different splits).
pub fn precedes_rule(b1: &SeqSpaceSpec, b2: &SeqSpaceSpec) -> Option<bool> {
    let default_split = match (b1, b2) {
        (SeqSpaceSpec::Mixed { split, .. }, _) => *split,
        (_, SeqSpaceSpec::Mixed { split, .. }) => *split,
        _ => 0,
    };
    let (p1, q1, s1) = b1.as_mixed(default_split);
    let (p2, q2, s2) = b2.as_mixed(default_split);
    if s1 != s2 {
        return None;
    }
    Some(p1 <= p2 && q1 <= q2)
}

#[derive(Debug, Clone, Serialize)]
pub struct PrecedesReport {
    pub rule: Option<bool>,
    pub n_exponent: f64,
    pub ratio_small: f64,
    pub ratio_large: f64,
    pub growth: f64,
    pub consistent: bool,
}

/// Checks the rule-table verdict against randomized falsification: the
/// maximal dominated image ũ(γ̃) = Σ_γ ⟨γ̃−γ⟩^{−N} |u(γ)| must have B̃-norm
/// controlled by ‖u‖_B when the relation holds, and the measured constant
/// must grow with the support radius when it does not.
pub fn precedes_check(
    b1: &SeqSpaceSpec,
    b2: &SeqSpaceSpec,
    dim: usize,
    n_exponent: f64,
    trials: usize,
    seed: u64,
) -> Result<PrecedesReport> {
    if n_exponent <= dim as f64 {
        return Err(Error::InvalidInput(format!(
            "decay exponent {n_exponent} must exceed the lattice dimension {dim}"
        )));
    }
    let rule = precedes_rule(b1, b2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ratio_at = |radius: i64| -> f64 {
        let mut worst = 0.0f64;
        let boxed: Vec<Vec<i64>> = int_box(dim, radius);
        let target: Vec<Vec<i64>> = int_box(dim, radius + 2);
        for t in 0..=trials {
            let mut u = SeqFn::new(dim);
            for idx in &boxed {
                // trial 0 is the flat witness; the rest are random
                let m = if t == 0 { 1.0 } else { rng.gen::<f64>() };
                u.set(idx.clone(), Complex64::new(m, 0.0));
            }
            let nu = seq_norm(&u, b1);
            if nu == 0.0 {
                continue;
            }
            let mut image = SeqFn::new(dim);
            for gt in &target {
                let mut s = 0.0;
                for (g, v) in &u.entries {
                    let d2: f64 = gt
                        .iter()
                        .zip(g)
                        .map(|(a, b)| ((a - b) as f64).powi(2))
                        .sum();
                    s += (1.0 + d2).powf(-n_exponent / 2.0) * v.norm();
                }
                image.set(gt.clone(), Complex64::new(s, 0.0));
            }
            worst = worst.max(seq_norm(&image, b2) / nu);
        }
        worst
    };
    let ratio_small = ratio_at(2);
    let ratio_large = ratio_at(4);
    let growth = if ratio_small > 0.0 {
        ratio_large / ratio_small
    } else {
        1.0
    };
    let consistent = match rule {
        Some(true) => growth <= 1.25,
        Some(false) => growth >= 1.2,
        None => true,
    };
    Ok(PrecedesReport {
        rule,
        n_exponent,
        ratio_small,
        ratio_large,
        growth,
        consistent,
    })
}

fn int_box(dim: usize, radius: i64) -> Vec<Vec<i64>> {
    let mut out = vec![vec![]];
    for _ in 0..dim {
        let mut next = Vec::new();
        for stem in &out {
            for k in -radius..=radius {
                let mut idx = stem.clone();
                idx.push(k);
                next.push(idx);
            }
        }
        out = next;
    }
    out
}

/// Amalgam class data: local sups are taken over fundamental cells of the
/// lattice and aggregated in B. `n_decay` is the window decay exponent used
/// by the windowed variant and must exceed the lattice dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AmalgamSpec {
    pub b: SeqSpaceSpec,
    pub lattice: Lattice,
    pub n_decay: f64,
}

impl AmalgamSpec {
    pub fn new(b: SeqSpaceSpec, lattice: Lattice, n_decay: f64) -> Result<Self> {
        if n_decay <= lattice.dim() as f64 {
            return Err(Error::InvalidInput(format!(
                "decay exponent {n_decay} must exceed the lattice dimension {}",
                lattice.dim()
            )));
        }
        Ok(AmalgamSpec { b, lattice, n_decay })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AmalgamReport {
    pub norm: f64,
    pub cells: usize,
}

/// Cell-sup form of the amalgam norm: the B-norm of γ ↦ sup over the cell at
/// γ of |u|. Cells partition the grid by nearest lattice point.
pub fn amalgam_norm(u: &GridSymbol, spec: &AmalgamSpec) -> Result<AmalgamReport> {
    let d = u.grid.axes.len();
    if spec.lattice.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "amalgam lattice dim {} vs grid dim {d}",
            spec.lattice.dim()
        )));
    }
    let basis = DMatrix::from_fn(d, d, |i, j| spec.lattice.basis[j][i]);
    let inv = basis
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("lattice basis is singular".into()))?;
    let mut sups: HashMap<Vec<i64>, f64> = HashMap::new();
    for (idx, v) in u.values.indexed_iter() {
        let rho: Vec<f64> = (0..d)
            .map(|ax| u.grid.axes[ax].coord(idx[ax]) - spec.lattice.offset[ax])
            .collect();
        let cell: Vec<i64> = (0..d)
            .map(|i| {
                let c: f64 = (0..d).map(|j| inv[(i, j)] * rho[j]).sum();
                c.round() as i64
            })
            .collect();
        let e = sups.entry(cell).or_insert(0.0);
        *e = e.max(v.norm());
    }
    let mut seq = SeqFn::new(d);
    let cells = sups.len();
    for (cell, s) in sups {
        seq.set(cell, Complex64::new(s, 0.0));
    }
    Ok(AmalgamReport {
        norm: seq_norm(&seq, &spec.b),
        cells,
    })
}

/// Window-weighted variant: v(γ) = sup_ρ |u(ρ)| ⟨ρ−γ⟩^{−N}-free Gaussian
/// weight of the given width. Used to measure how much the norm depends on
/// the window choice.
pub fn amalgam_norm_windowed(
    u: &GridSymbol,
    spec: &AmalgamSpec,
    width: f64,
) -> Result<AmalgamReport> {
    let d = u.grid.axes.len();
    if spec.lattice.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "amalgam lattice dim {} vs grid dim {d}",
            spec.lattice.dim()
        )));
    }
    if !(width > 0.0) {
        return Err(Error::InvalidInput("window width must be positive".into()));
    }
    let extent = u
        .grid
        .axes
        .iter()
        .map(|a| a.extent)
        .fold(0.0f64, f64::max);
    let pts = spec.lattice.points_in_box(extent * (d as f64).sqrt() + 1.0)?;
    let mut seq = SeqFn::new(d);
    for lp in &pts {
        let mut s = 0.0f64;
        for (idx, v) in u.values.indexed_iter() {
            let d2: f64 = (0..d)
                .map(|ax| (u.grid.axes[ax].coord(idx[ax]) - lp.point[ax]).powi(2))
                .sum();
            s = s.max(v.norm() * (-d2 / (2.0 * width * width)).exp());
        }
        if s > 0.0 {
            seq.set(lp.index.clone(), Complex64::new(s, 0.0));
        }
    }
    let cells = seq.entries.len();
    Ok(AmalgamReport {
        norm: seq_norm(&seq, &spec.b),
        cells,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Assumption79Report {
    pub constant: f64,
    pub value_small: f64,
    pub value_large: f64,
    pub divergent: bool,
    pub radius: f64,
    pub trials: usize,
    pub seed: u64,
}

/// Discrete kernel-times-sequence estimate: over dominated pairs normalized
/// to ‖k₁/m₁‖_{B₁} = ‖k₂/m₂‖_{B₂} = 1, the composed
/// k₃(α) = Σ_β k₁(α,β) k₂(β) is measured in ‖k₃/m₃‖_{B₃}. Trial 0 takes
/// the coefficients equal to the majorants (the deterministic worst case);
/// its growth beyond 10% per radius doubling raises the divergence flag.
/// Random trials only contribute to the reported constant, since their sup
/// creeps with the sample count even in convergent regimes.
#[allow(clippy::too_many_arguments)]
pub fn assumption79_estimate(
    m1: &OrderFunction,
    b1: &SeqSpaceSpec,
    m2: &OrderFunction,
    b2: &SeqSpaceSpec,
    m3: &OrderFunction,
    b3: &SeqSpaceSpec,
    lat: &Lattice,
    radius: f64,
    trials: usize,
    seed: u64,
) -> Result<Assumption79Report> {
    let d = lat.dim();
    if m1.dim != 2 * d || m2.dim != d || m3.dim != d {
        return Err(Error::DimensionMismatch(format!(
            "majorant dims ({}, {}, {}) vs lattice dim {d}",
            m1.dim, m2.dim, m3.dim
        )));
    }
    // (worst over all trials, deterministic trial alone)
    let value_at = |r: f64, seed: u64| -> (f64, f64) {
        let pts = lat.points_in_box(r).expect("radius checked");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        let mut det = 0.0f64;
        for t in 0..=trials {
            let mut draw = |deterministic: bool| -> Complex64 {
                if deterministic {
                    Complex64::new(1.0, 0.0)
                } else {
                    let mag: f64 = rng.gen::<f64>();
                    let arg: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
                    Complex64::from_polar(mag, arg)
                }
            };
            let mut r1 = SeqFn::new(2 * d);
            for a in &pts {
                for b in &pts {
                    let mut idx = a.index.clone();
                    idx.extend_from_slice(&b.index);
                    r1.set(idx, draw(t == 0));
                }
            }
            let n1 = seq_norm(&r1, b1);
            let mut r2 = SeqFn::new(d);
            for b in &pts {
                r2.set(b.index.clone(), draw(t == 0));
            }
            let n2 = seq_norm(&r2, b2);
            if n1 == 0.0 || n2 == 0.0 {
                continue;
            }
            let mut ratio3 = SeqFn::new(d);
            for a in &pts {
                let mut s = Complex64::new(0.0, 0.0);
                for b in &pts {
                    let mut idx = a.index.clone();
                    idx.extend_from_slice(&b.index);
                    let pair: Vec<f64> = a
                        .point
                        .iter()
                        .chain(b.point.iter())
                        .copied()
                        .collect();
                    let k1 = r1.get(&idx) / n1 * m1.eval(&pair);
                    let k2 = r2.get(&b.index) / n2 * m2.eval(&b.point);
                    s += k1 * k2;
                }
                ratio3.set(a.index.clone(), s / m3.eval(&a.point));
            }
            let v = seq_norm(&ratio3, b3);
            worst = worst.max(v);
            if t == 0 {
                det = v;
            }
        }
        (worst, det)
    };
    let (worst_small, det_small) = value_at(radius, seed);
    let (worst_large, det_large) = value_at(2.0 * radius, seed);
    let divergent = det_large > 1.1 * det_small;
    Ok(Assumption79Report {
        constant: worst_small.max(worst_large),
        value_small: det_small,
        value_large: det_large,
        divergent,
        radius,
        trials,
        seed,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelActionReport {
    pub lhs: f64,
    pub kernel_norm: f64,
    pub input_norm: f64,
    pub constant: f64,
}

/// Quadrature action of a grid kernel on a grid function with amalgam
/// bookkeeping: K₃(x) = ∫ K(x,z) u(z) dz, and the report relates
/// ‖K₃/m₃‖_[B₃] to ‖K/m₁‖_[B₁] ‖u/m₂‖_[B₂].
#[allow(clippy::too_many_arguments)]
pub fn kernel_action(
    k: &GridSymbol,
    u: &GridSymbol,
    m1: &OrderFunction,
    a1: &AmalgamSpec,
    m2: &OrderFunction,
    a2: &AmalgamSpec,
    m3: &OrderFunction,
    a3: &AmalgamSpec,
) -> Result<(GridSymbol, KernelActionReport)> {
    let du = u.grid.axes.len();
    let dk = k.grid.axes.len();
    if dk != 2 * du {
        return Err(Error::DimensionMismatch(format!(
            "kernel grid has {dk} axes, expected twice the argument's {du}"
        )));
    }
    for ax in 0..du {
        if k.grid.axes[du + ax] != u.grid.axes[ax] {
            return Err(Error::DimensionMismatch(format!(
                "kernel z-axis {ax} disagrees with the argument grid"
            )));
        }
    }
    let weight: f64 = u.grid.axes.iter().map(|a| a.spacing()).product();
    let mut out = GridSymbol::zeros(u.grid.clone(), u.n, &u.domain);
    let ushape: Vec<usize> = u.grid.axes.iter().map(|a| a.n).collect();
    for (xidx, ov) in out.values.indexed_iter_mut() {
        let mut s = Complex64::new(0.0, 0.0);
        let mut zidx = vec![0usize; du];
        loop {
            let mut full: Vec<usize> = (0..du).map(|ax| xidx[ax]).collect();
            full.extend_from_slice(&zidx);
            s += k.values[full.as_slice()] * u.values[zidx.as_slice()];
            // odometer over z
            let mut ax = du;
            loop {
                if ax == 0 {
                    break;
                }
                ax -= 1;
                zidx[ax] += 1;
                if zidx[ax] < ushape[ax] {
                    break;
                }
                zidx[ax] = 0;
                if ax == 0 {
                    break;
                }
            }
            if zidx.iter().all(|&i| i == 0) {
                break;
            }
        }
        *ov = s * weight;
    }
    let kernel_norm = amalgam_norm(&ratio_symbol(k, m1)?, a1)?.norm;
    let input_norm = amalgam_norm(&ratio_symbol(u, m2)?, a2)?.norm;
    let lhs = amalgam_norm(&ratio_symbol(&out, m3)?, a3)?.norm;
    let denom = kernel_norm * input_norm;
    let constant = if denom > 0.0 { lhs / denom } else { 0.0 };
    Ok((
        out,
        KernelActionReport {
            lhs,
            kernel_norm,
            input_norm,
            constant,
        },
    ))
}

/// Pointwise u/m on the grid.
pub fn ratio_symbol(u: &GridSymbol, m: &OrderFunction) -> Result<GridSymbol> {
    let d = u.grid.axes.len();
    if m.dim != d {
        return Err(Error::DimensionMismatch(format!(
            "order function dim {} vs grid dim {d}",
            m.dim
        )));
    }
    let mut out = u.clone();
    for (idx, v) in out.values.indexed_iter_mut() {
        let rho: Vec<f64> = (0..d).map(|ax| u.grid.axes[ax].coord(idx[ax])).collect();
        *v /= m.eval(&rho);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{AxisSpec, Grid};

    fn family() -> Vec<SeqSpaceSpec> {
        vec![
            SeqSpaceSpec::lp(1.0).unwrap(),
            SeqSpaceSpec::lp(1.5).unwrap(),
            SeqSpaceSpec::lp(2.0).unwrap(),
            SeqSpaceSpec::lp(f64::INFINITY).unwrap(),
            SeqSpaceSpec::mixed(1.0, f64::INFINITY, 1).unwrap(),
            SeqSpaceSpec::mixed(2.0, 1.0, 1).unwrap(),
        ]
    }

    fn random_seq(dim: usize, radius: i64, rng: &mut ChaCha8Rng) -> SeqFn {
        let mut u = SeqFn::new(dim);
        for idx in int_box(dim, radius) {
            if rng.gen::<f64>() < 0.7 {
                let mag: f64 = rng.gen::<f64>();
                let arg: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
                u.set(idx, Complex64::from_polar(mag, arg));
            }
        }
        u
    }

    #[test]
    fn point_mass_has_unit_norm_everywhere() {
        for b in family() {
            let mut u = SeqFn::new(2);
            u.set(vec![3, -1], Complex64::new(1.0, 0.0));
            assert_eq!(seq_norm(&u, &b), 1.0, "{b:?}");
        }
    }

    #[test]
    fn flat_vector_norm_is_count_root() {
        let k = 6usize;
        let mut u = SeqFn::new(1);
        for i in 0..k {
            u.set(vec![i as i64], Complex64::new(1.0, 0.0));
        }
        for p in [1.0, 2.0, 3.0] {
            let b = SeqSpaceSpec::lp(p).unwrap();
            let want = (k as f64).powf(1.0 / p);
            assert!((seq_norm(&u, &b) - want).abs() < 1e-12);
        }
        let binf = SeqSpaceSpec::lp(f64::INFINITY).unwrap();
        assert_eq!(seq_norm(&u, &binf), 1.0);
    }

    #[test]
    fn mixed_norm_row_pattern() {
        // u(α, β) supported on one row: inner ℓ¹ over β then sup over α
        let mut u = SeqFn::new(2);
        u.set(vec![2, 0], Complex64::new(1.0, 0.0));
        u.set(vec![2, 1], Complex64::new(2.0, 0.0));
        u.set(vec![5, 0], Complex64::new(0.5, 0.0));
        let b = SeqSpaceSpec::mixed(1.0, f64::INFINITY, 1).unwrap();
        assert!((seq_norm(&u, &b) - 3.0).abs() < 1e-15);
        let b21 = SeqSpaceSpec::mixed(2.0, 1.0, 1).unwrap();
        let want = (1.0f64 + 4.0).sqrt() + 0.5;
        assert!((seq_norm(&u, &b21) - want).abs() < 1e-15);
    }

    #[test]
    fn translation_invariance_is_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for b in family() {
            for _ in 0..20 {
                let u = random_seq(2, 3, &mut rng);
                let shift = [rng.gen_range(-9i64..9), rng.gen_range(-9i64..9)];
                let v = u.translate(&shift);
                assert_eq!(seq_norm(&u, &b), seq_norm(&v, &b), "{b:?}");
            }
        }
    }

    #[test]
    fn solidity_with_constant_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for b in family() {
            for _ in 0..100 {
                let u = random_seq(2, 3, &mut rng);
                let mut v = u.clone();
                for w in v.entries.values_mut() {
                    *w *= rng.gen::<f64>();
                }
                assert!(seq_norm(&v, &b) <= seq_norm(&u, &b) * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn embedding_constants_are_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let linf = SeqSpaceSpec::lp(f64::INFINITY).unwrap();
        let l1 = SeqSpaceSpec::lp(1.0).unwrap();
        for b in family() {
            for _ in 0..100 {
                let u = random_seq(2, 3, &mut rng);
                let nb = seq_norm(&u, &b);
                assert!(seq_norm(&u, &linf) <= nb * (1.0 + 1e-12));
                assert!(nb <= seq_norm(&u, &l1) * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn convolution_bound_holds() {
        // delta convolves to equality
        let mut delta = SeqFn::new(2);
        delta.set(vec![0, 0], Complex64::new(1.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let u = random_seq(2, 3, &mut rng);
        for b in family() {
            let r = convolve_bound_check(&delta, &u, &b);
            assert!(r.holds);
            assert!((r.lhs - seq_norm(&u, &b)).abs() < 1e-12);
        }
        // two-point averaging kernel on a point mass
        let mut f = SeqFn::new(1);
        f.set(vec![0], Complex64::new(0.5, 0.0));
        f.set(vec![1], Complex64::new(0.5, 0.0));
        let mut d0 = SeqFn::new(1);
        d0.set(vec![0], Complex64::new(1.0, 0.0));
        let r = convolve_bound_check(&f, &d0, &SeqSpaceSpec::lp(1.0).unwrap());
        assert!((r.lhs - 1.0).abs() < 1e-15 && (r.rhs - 1.0).abs() < 1e-15);
        // random trials across the family
        for b in family() {
            for _ in 0..100 {
                let f = random_seq(2, 2, &mut rng);
                let u = random_seq(2, 2, &mut rng);
                assert!(convolve_bound_check(&f, &u, &b).holds, "{b:?}");
            }
        }
    }

    #[test]
    fn dominated_kernels_stay_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for b in family() {
            let f = random_seq(2, 2, &mut rng);
            let u = random_seq(2, 2, &mut rng);
            let r = dominated_kernel_check(&f, &u, &b, 20, 99);
            assert!(r.holds, "{b:?}: {} > {}", r.lhs, r.rhs);
        }
    }

    #[test]
    fn precedes_rule_table_orders_exponents() {
        let l1 = SeqSpaceSpec::lp(1.0).unwrap();
        let l2 = SeqSpaceSpec::lp(2.0).unwrap();
        let linf = SeqSpaceSpec::lp(f64::INFINITY).unwrap();
        assert_eq!(precedes_rule(&l1, &l2), Some(true));
        assert_eq!(precedes_rule(&l2, &l1), Some(false));
        assert_eq!(precedes_rule(&l2, &l2), Some(true));
        assert_eq!(precedes_rule(&l1, &linf), Some(true));
        let m1 = SeqSpaceSpec::mixed(1.0, 2.0, 1).unwrap();
        let m2 = SeqSpaceSpec::mixed(2.0, 2.0, 1).unwrap();
        assert_eq!(precedes_rule(&m1, &m2), Some(true));
        assert_eq!(precedes_rule(&m2, &m1), Some(false));
        let m3 = SeqSpaceSpec::mixed(1.0, 2.0, 2).unwrap();
        assert_eq!(precedes_rule(&m1, &m3), None);
    }

    #[test]
    fn precedes_check_matches_rule_and_ignores_decay_choice() {
        let l1 = SeqSpaceSpec::lp(1.0).unwrap();
        let l2 = SeqSpaceSpec::lp(2.0).unwrap();
        let r3 = precedes_check(&l1, &l2, 2, 3.0, 5, 7).unwrap();
        let r5 = precedes_check(&l1, &l2, 2, 5.0, 5, 7).unwrap();
        assert!(r3.consistent && r5.consistent);
        assert_eq!(r3.rule, r5.rule);
        // the reverse relation is falsified by spreading support
        let w3 = precedes_check(&l2, &l1, 2, 3.0, 5, 7).unwrap();
        let w5 = precedes_check(&l2, &l1, 2, 5.0, 5, 7).unwrap();
        assert!(w3.consistent && w5.consistent);
        assert_eq!(w3.rule, w5.rule);
        assert!(w3.growth > 1.2, "growth {}", w3.growth);
    }

    #[test]
    fn amalgam_cell_sup_basics() {
        let grid = Grid::isotropic(2, 24, 6.0).unwrap();
        let ones = GridSymbol::sample(grid.clone(), 1, "E", |_| Complex64::new(1.0, 0.0));
        let spec = AmalgamSpec::new(
            SeqSpaceSpec::lp(f64::INFINITY).unwrap(),
            Lattice::standard(2),
            3.0,
        )
        .unwrap();
        let r = amalgam_norm(&ones, &spec).unwrap();
        assert!((r.norm - 1.0).abs() < 1e-15);
        assert!(r.cells > 100);
        // single-cell bump lands in ℓ¹ as its peak value
        let bump = GridSymbol::sample(grid.clone(), 1, "E", |z| {
            let d2 = z[0] * z[0] + z[1] * z[1];
            Complex64::new(0.7 * (-d2 * 40.0).exp(), 0.0)
        });
        let spec1 = AmalgamSpec::new(SeqSpaceSpec::lp(1.0).unwrap(), Lattice::standard(2), 3.0)
            .unwrap();
        let r1 = amalgam_norm(&bump, &spec1).unwrap();
        assert!(r1.norm >= 0.7 && r1.norm < 0.72, "norm {}", r1.norm);
        let zero = GridSymbol::zeros(grid, 1, "E");
        assert_eq!(amalgam_norm(&zero, &spec1).unwrap().norm, 0.0);
    }

    #[test]
    fn amalgam_window_choice_shifts_norm_by_bounded_factor() {
        let grid = Grid::isotropic(2, 24, 6.0).unwrap();
        let u = GridSymbol::sample(grid, 1, "E", |z| {
            let d2 = (z[0] - 0.4).powi(2) + (z[1] + 1.0).powi(2);
            Complex64::new((-d2 / 3.0).exp(), 0.0)
        });
        let spec = AmalgamSpec::new(SeqSpaceSpec::lp(2.0).unwrap(), Lattice::standard(2), 3.0)
            .unwrap();
        let cell = amalgam_norm(&u, &spec).unwrap().norm;
        let narrow = amalgam_norm_windowed(&u, &spec, 0.5).unwrap().norm;
        let wide = amalgam_norm_windowed(&u, &spec, 1.0).unwrap().norm;
        for w in [narrow, wide] {
            let ratio = w / cell;
            assert!(ratio > 0.2 && ratio < 5.0, "ratio {ratio}");
        }
    }

    #[test]
    fn kernel_sum_estimate_distinguishes_regimes() {
        let lat = Lattice::standard(2);
        let linf = SeqSpaceSpec::lp(f64::INFINITY).unwrap();
        // chord-decay majorant on pairs: finite constant
        let space = crate::phase_space::SymplecticSpace::new(1).unwrap();
        let mut l = DMatrix::zeros(4, 4);
        // (α, β) ↦ ((α+β)/2, J⁻¹(β−α))
        for i in 0..2 {
            l[(i, i)] = 0.5;
            l[(i, 2 + i)] = 0.5;
        }
        // J⁻¹(x, ξ) = (−ξ, x)
        l[(2, 1)] = 1.0;
        l[(2, 3)] = -1.0;
        l[(3, 0)] = -1.0;
        l[(3, 2)] = 1.0;
        let _ = space;
        let chord4 = OrderFunction::slot_bracket_power(4, 2, 4, &[0.0, 0.0], -4.0)
            .precompose(&l, &[0.0; 4])
            .unwrap();
        let one2 = OrderFunction::constant(2, 1.0).unwrap();
        let r = assumption79_estimate(
            &chord4, &linf, &one2, &linf, &one2, &linf, &lat, 3.0, 4, 21,
        )
        .unwrap();
        assert!(!r.divergent, "chord-decay regime diverged: {r:?}");
        assert!(r.constant.is_finite() && r.constant > 0.0);
        // flat pair majorant: row sums grow with the box
        let one4 = OrderFunction::constant(4, 1.0).unwrap();
        let r = assumption79_estimate(
            &one4, &linf, &one2, &linf, &one2, &linf, &lat, 3.0, 4, 21,
        )
        .unwrap();
        assert!(r.divergent, "flat majorant must diverge: {r:?}");
        // ℓ¹ pairs against ℓ^∞: constant at most 1
        let l1 = SeqSpaceSpec::lp(1.0).unwrap();
        let r = assumption79_estimate(
            &one4, &l1, &one2, &linf, &one2, &linf, &lat, 3.0, 4, 21,
        )
        .unwrap();
        assert!(r.constant <= 1.0 + 1e-9, "constant {}", r.constant);
    }

    #[test]
    fn kernel_action_smooths_and_stays_bounded() {
        let n = 12usize;
        let axis = AxisSpec::new(n, 4.0).unwrap();
        let ugrid = Grid::new(vec![axis.clone(), axis.clone()]);
        let kgrid = Grid::new(vec![axis.clone(), axis.clone(), axis.clone(), axis]);
        let k = GridSymbol::sample(kgrid, 2, "ExE", |z| {
            let d2 = (z[0] - z[2]).powi(2) + (z[1] - z[3]).powi(2);
            Complex64::new((1.0 + d2).powf(-2.0), 0.0)
        });
        let u = GridSymbol::sample(ugrid, 1, "E", |z| {
            Complex64::new((-(z[0] * z[0] + z[1] * z[1])).exp(), 0.0)
        });
        let m2 = OrderFunction::constant(2, 1.0).unwrap();
        let m4 = OrderFunction::constant(4, 1.0).unwrap();
        let lat2 = Lattice::standard(2);
        let lat4 = Lattice::standard(4);
        let linf = SeqSpaceSpec::lp(f64::INFINITY).unwrap();
        let a2 = AmalgamSpec::new(linf.clone(), lat2, 3.0).unwrap();
        let a4 = AmalgamSpec::new(SeqSpaceSpec::mixed(1.0, f64::INFINITY, 2).unwrap(), lat4, 5.0)
            .unwrap();
        let (out, rep) = kernel_action(&k, &u, &m4, &a4, &m2, &a2, &m2, &a2).unwrap();
        // smoothing: output peak at origin, wider than input
        let peak = out.max_abs();
        assert!(peak > 0.0);
        let mid = n / 2;
        let center = out.values[[mid, mid]].norm();
        assert!(center > 0.5 * peak);
        assert!(rep.constant.is_finite() && rep.lhs <= rep.kernel_norm * rep.input_norm * 4.0);
    }
}

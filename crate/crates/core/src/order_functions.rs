//! Order functions m: ℝᵈ → (0, ∞) with m(ρ) ≤ C₀⟨ρ−μ⟩^{N₀} m(μ).
//!
//! An order function is represented as a product of bracket powers
//! ⟨A(ρ)⟩^p of affine maps, times a positive constant. The representation is
//! closed under products and affine reparametrization, which is exactly what
//! the composition integral and the trace-class criteria need: every
//! integrand built here is again such a product, so integrability at infinity
//! is decided symbolically from the exponents (see [`crate::quadrature`]).

use crate::error::{Error, Result};
use crate::phase_space::{bracket, SymplecticSpace};
use crate::quadrature::{self, integrable_on_rd, QuadConfig, QuadratureReport, TailAtom};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// ρ ↦ Mρ + b with M given by rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub matrix: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
}

impl AffineMap {
    pub fn new(matrix: Vec<Vec<f64>>, offset: Vec<f64>) -> Result<Self> {
        if matrix.len() != offset.len() {
            return Err(Error::DimensionMismatch(
                "affine map needs one offset entry per matrix row".into(),
            ));
        }
        if matrix.is_empty() {
            return Err(Error::InvalidInput("affine map needs at least one row".into()));
        }
        let cols = matrix[0].len();
        if cols == 0 || matrix.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged affine matrix".into()));
        }
        Ok(AffineMap { matrix, offset })
    }

    pub fn identity(d: usize) -> Self {
        AffineMap {
            matrix: (0..d)
                .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
            offset: vec![0.0; d],
        }
    }

    /// Projection onto coordinates [lo, hi), optionally recentered.
    pub fn slot(d: usize, lo: usize, hi: usize, center: &[f64]) -> Self {
        AffineMap {
            matrix: (lo..hi)
                .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
            offset: center.iter().map(|c| -c).collect(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.matrix[0].len()
    }

    pub fn out_dim(&self) -> usize {
        self.matrix.len()
    }

    pub fn apply(&self, rho: &[f64]) -> Vec<f64> {
        self.matrix
            .iter()
            .zip(&self.offset)
            .map(|(row, b)| row.iter().zip(rho).map(|(m, x)| m * x).sum::<f64>() + b)
            .collect()
    }

    pub fn linear(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.out_dim(), self.in_dim(), |i, j| self.matrix[i][j])
    }

    /// Spectral norm of the linear part.
    pub fn op_norm(&self) -> f64 {
        let svd = self.linear().svd(false, false);
        svd.singular_values.iter().cloned().fold(0.0, f64::max)
    }

    /// Composite map ρ ↦ A(Lρ + t).
    fn precompose(&self, l: &DMatrix<f64>, t: &[f64]) -> AffineMap {
        let m = self.linear() * l;
        let shift = self.apply(t);
        AffineMap {
            matrix: (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
                .collect(),
            offset: shift,
        }
    }
}

/// Expression tree; serializes as `{"constant": c}`, `{"atom": {...}}` or
/// `{"product": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expr {
    Constant(f64),
    Atom(AtomExpr),
    Product(Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomExpr {
    pub exponent: f64,
    pub affine: AffineMap,
}

/// Peetre-type certificate: m(ρ) ≤ C₀⟨ρ−μ⟩^{N₀} m(μ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub c0: f64,
    pub n0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderFunction {
    pub dim: usize,
    pub expr: Expr,
}

fn validate_expr(expr: &Expr, dim: usize) -> Result<()> {
    match expr {
        Expr::Constant(c) => {
            if !(*c > 0.0) || !c.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "order function constants must be positive and finite, got {c}"
                )));
            }
        }
        Expr::Atom(a) => {
            if !a.exponent.is_finite() {
                return Err(Error::InvalidInput("non-finite exponent".into()));
            }
            if a.affine.in_dim() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "atom expects {} input coordinates, order function has {}",
                    a.affine.in_dim(),
                    dim
                )));
            }
        }
        Expr::Product(fs) => {
            for f in fs {
                validate_expr(f, dim)?;
            }
        }
    }
    Ok(())
}

fn expr_dim(expr: &Expr) -> Option<usize> {
    match expr {
        Expr::Constant(_) => None,
        Expr::Atom(a) => Some(a.affine.in_dim()),
        Expr::Product(fs) => fs.iter().find_map(expr_dim),
    }
}

impl OrderFunction {
    pub fn new(dim: usize, expr: Expr) -> Result<Self> {
        validate_expr(&expr, dim)?;
        Ok(OrderFunction { dim, expr })
    }

    /// Parse either a bare expression node or `{"dim": d, "expr": node}`.
    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        if let Some(obj) = value.as_object() {
            if obj.contains_key("expr") {
                let dim = obj
                    .get("dim")
                    .and_then(|v| v.as_u64())
                    .ok_or_else(|| Error::InvalidInput("wrapper needs a dim field".into()))?;
                let expr: Expr = serde_json::from_value(obj["expr"].clone())?;
                return OrderFunction::new(dim as usize, expr);
            }
        }
        let expr: Expr = serde_json::from_value(value.clone())?;
        let dim = expr_dim(&expr).ok_or_else(|| {
            Error::InvalidInput("cannot infer dimension of a constant order function".into())
        })?;
        OrderFunction::new(dim, expr)
    }

    pub fn constant(dim: usize, c: f64) -> Result<Self> {
        OrderFunction::new(dim, Expr::Constant(c))
    }

    /// ⟨ρ⟩^p.
    pub fn bracket_power(dim: usize, p: f64) -> Self {
        OrderFunction {
            dim,
            expr: Expr::Atom(AtomExpr {
                exponent: p,
                affine: AffineMap::identity(dim),
            }),
        }
    }

    /// ⟨ρ − a⟩^p.
    pub fn shifted_bracket_power(dim: usize, center: &[f64], p: f64) -> Self {
        OrderFunction {
            dim,
            expr: Expr::Atom(AtomExpr {
                exponent: p,
                affine: AffineMap::slot(dim, 0, dim, center),
            }),
        }
    }

    /// ⟨(ρ_lo, …, ρ_{hi−1}) − c⟩^p, a bracket power of a coordinate slice.
    pub fn slot_bracket_power(dim: usize, lo: usize, hi: usize, center: &[f64], p: f64) -> Self {
        OrderFunction {
            dim,
            expr: Expr::Atom(AtomExpr {
                exponent: p,
                affine: AffineMap::slot(dim, lo, hi, center),
            }),
        }
    }

    pub fn product(factors: Vec<OrderFunction>) -> Result<Self> {
        let dim = factors
            .first()
            .map(|f| f.dim)
            .ok_or_else(|| Error::InvalidInput("empty product".into()))?;
        if factors.iter().any(|f| f.dim != dim) {
            return Err(Error::DimensionMismatch(
                "product factors live on different spaces".into(),
            ));
        }
        OrderFunction::new(dim, Expr::Product(factors.into_iter().map(|f| f.expr).collect()))
    }

    pub fn eval(&self, rho: &[f64]) -> f64 {
        fn go(expr: &Expr, rho: &[f64]) -> f64 {
            match expr {
                Expr::Constant(c) => *c,
                Expr::Atom(a) => bracket(&a.affine.apply(rho)).powf(a.exponent),
                Expr::Product(fs) => fs.iter().map(|f| go(f, rho)).product(),
            }
        }
        go(&self.expr, rho)
    }

    /// Flatten to scalar · Π ⟨A_i(ρ)⟩^{p_i}.
    pub fn flatten(&self) -> (f64, Vec<AtomExpr>) {
        fn go(expr: &Expr, scalar: &mut f64, atoms: &mut Vec<AtomExpr>) {
            match expr {
                Expr::Constant(c) => *scalar *= c,
                Expr::Atom(a) => atoms.push(a.clone()),
                Expr::Product(fs) => fs.iter().for_each(|f| go(f, scalar, atoms)),
            }
        }
        let mut scalar = 1.0;
        let mut atoms = Vec::new();
        go(&self.expr, &mut scalar, &mut atoms);
        (scalar, atoms)
    }

    /// Symbolic certificate. Each atom ⟨A(ρ)⟩^p with linear part M obeys
    /// ⟨A(ρ)⟩^p ≤ (2^{1/2} max(1, ‖M‖))^{|p|} ⟨ρ−μ⟩^{|p|·max(1,‖M‖)} ⟨A(μ)⟩^p
    /// by Peetre's inequality and ⟨Mu⟩ ≤ max(1, ‖M‖)⟨u⟩; exponents add and
    /// constants multiply over products. N₀ is floored at 1.
    pub fn certificate(&self) -> Certificate {
        let (_, atoms) = self.flatten();
        let mut n0 = 0.0;
        let mut c0 = 1.0;
        for a in &atoms {
            let p = a.exponent.abs();
            let gain = a.affine.op_norm().max(1.0);
            n0 += p * gain;
            c0 *= (2.0f64.sqrt() * gain).powf(p);
        }
        Certificate { c0, n0: n0.max(1.0) }
    }

    /// Randomized validation of the certificate on `pairs` samples from a
    /// sup-norm ball. Returns the worst observed ratio and a witness if the
    /// bound fails.
    pub fn certify(&self, seed: u64, pairs: usize, radius: f64) -> CertifyReport {
        let cert = self.certificate();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut max_ratio = 0.0f64;
        let mut witness = None;
        for _ in 0..pairs {
            let rho: Vec<f64> = (0..self.dim).map(|_| rng.gen_range(-radius..radius)).collect();
            let mu: Vec<f64> = (0..self.dim).map(|_| rng.gen_range(-radius..radius)).collect();
            let diff: Vec<f64> = rho.iter().zip(&mu).map(|(a, b)| a - b).collect();
            let ratio = self.eval(&rho) / (bracket(&diff).powf(cert.n0) * self.eval(&mu));
            if ratio > max_ratio {
                max_ratio = ratio;
                if ratio > cert.c0 * (1.0 + 1e-9) {
                    witness = Some((rho.clone(), mu.clone(), ratio));
                }
            }
        }
        CertifyReport {
            certificate: cert,
            max_ratio,
            ok: witness.is_none(),
            witness,
        }
    }

    /// Pull back along ρ = Lu + t: returns u ↦ m(Lu + t) on ℝ^{L.ncols()}.
    pub fn precompose(&self, l: &DMatrix<f64>, t: &[f64]) -> Result<OrderFunction> {
        if l.nrows() != self.dim || t.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "precompose target has {} rows / offset {}, order function needs {}",
                l.nrows(),
                t.len(),
                self.dim
            )));
        }
        fn go(expr: &Expr, l: &DMatrix<f64>, t: &[f64]) -> Expr {
            match expr {
                Expr::Constant(c) => Expr::Constant(*c),
                Expr::Atom(a) => Expr::Atom(AtomExpr {
                    exponent: a.exponent,
                    affine: a.affine.precompose(l, t),
                }),
                Expr::Product(fs) => Expr::Product(fs.iter().map(|f| go(f, l, t)).collect()),
            }
        }
        OrderFunction::new(l.ncols(), go(&self.expr, l, t))
    }

    /// Tail data for the symbolic integrability test.
    pub fn tail_atoms(&self) -> Vec<TailAtom> {
        self.flatten()
            .1
            .into_iter()
            .map(|a| TailAtom {
                linear: a.affine.linear(),
                exponent: a.exponent,
            })
            .collect()
    }

    /// Split the flattened atoms by which coordinate slots they touch.
    pub fn slot_split(&self, split: usize) -> SlotSplit {
        let (scalar, atoms) = self.flatten();
        let mut out = SlotSplit {
            scalar,
            first: Vec::new(),
            second: Vec::new(),
            mixed: Vec::new(),
        };
        for a in atoms {
            let lin = a.affine.linear();
            let first_active = (0..split).any(|j| lin.column(j).norm() > 1e-14);
            let second_active =
                (split..self.dim).any(|j| lin.column(j).norm() > 1e-14);
            match (first_active, second_active) {
                (true, false) => out.first.push(a),
                (false, true) => out.second.push(a),
                (false, false) => out.scalar *= bracket(&a.affine.offset).powf(a.exponent),
                (true, true) => out.mixed.push(a),
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct CertifyReport {
    pub certificate: Certificate,
    pub max_ratio: f64,
    pub ok: bool,
    pub witness: Option<(Vec<f64>, Vec<f64>, f64)>,
}

#[derive(Debug, Clone)]
pub struct SlotSplit {
    pub scalar: f64,
    pub first: Vec<AtomExpr>,
    pub second: Vec<AtomExpr>,
    pub mixed: Vec<AtomExpr>,
}

fn eval_atoms(atoms: &[AtomExpr], rho: &[f64]) -> f64 {
    atoms
        .iter()
        .map(|a| bracket(&a.affine.apply(rho)).powf(a.exponent))
        .product()
}

/// J as a 2n×2n matrix in (x, ξ) coordinates.
pub fn j_matrix(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(i, n + i)] = 1.0;
        j[(n + i, i)] = -1.0;
    }
    j
}

fn stack_vertical(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}

/// Both m₁, m₂ live on E×E* (dimension 4n). The composition integrand at
/// (z, z*), parametrized by the free variable u ∈ E:
///
///   m₁(u, z* + 2J⁻¹(u−z)) · m₂(u + ½Jz*, 2J⁻¹(z−u)),
///
/// which is the constrained-plane integral with x* , y, y* eliminated.
pub fn compose_integrand(
    space: &SymplecticSpace,
    m1: &OrderFunction,
    m2: &OrderFunction,
    z: &[f64],
    zs: &[f64],
) -> Result<OrderFunction> {
    let d = space.dim();
    if m1.dim != 2 * d || m2.dim != 2 * d {
        return Err(Error::DimensionMismatch(format!(
            "composition needs order functions on E×E* (dimension {}), got {} and {}",
            2 * d,
            m1.dim,
            m2.dim
        )));
    }
    if z.len() != d || zs.len() != d {
        return Err(Error::DimensionMismatch(
            "base point (z, z*) must lie in E×E*".into(),
        ));
    }
    let j = j_matrix(space.n);
    let j_inv = -j.clone();
    let id = DMatrix::<f64>::identity(d, d);

    // ρ₁(u) = (u, z* + 2J⁻¹u − 2J⁻¹z)
    let l1 = stack_vertical(&id, &(2.0 * &j_inv));
    let jz = &j_inv * DMatrix::from_column_slice(d, 1, z);
    let mut t1 = vec![0.0; d];
    t1.extend((0..d).map(|i| zs[i] - 2.0 * jz[(i, 0)]));

    // ρ₂(u) = (u + ½Jz*, 2J⁻¹z − 2J⁻¹u)
    let l2 = stack_vertical(&id, &(-2.0 * &j_inv));
    let jzs = &j * DMatrix::from_column_slice(d, 1, zs);
    let mut t2: Vec<f64> = (0..d).map(|i| 0.5 * jzs[(i, 0)]).collect();
    t2.extend((0..d).map(|i| 2.0 * jz[(i, 0)]));

    let f1 = m1.precompose(&l1, &t1)?;
    let f2 = m2.precompose(&l2, &t2)?;
    OrderFunction::product(vec![f1, f2])
}

/// m₃(z, z*) = ∫_E m₁ m₂ over the constrained plane, by adaptive quadrature.
/// Divergence is decided symbolically before any numerics.
pub fn compose(
    space: &SymplecticSpace,
    m1: &OrderFunction,
    m2: &OrderFunction,
    z: &[f64],
    zs: &[f64],
    cfg: &QuadConfig,
) -> Result<QuadratureReport> {
    let integrand = compose_integrand(space, m1, m2, z, zs)?;
    let verdict = integrable_on_rd(&integrand.tail_atoms(), space.dim());
    if !verdict.integrable {
        return Err(Error::Divergent {
            what: "composition integral",
            detail: format!(
                "tail excess {:.3} on a {}-dimensional direction set",
                verdict.worst_excess, verdict.worst_subspace_dim
            ),
        });
    }
    quadrature::integrate_rd(&|u: &[f64]| integrand.eval(u), space.dim(), cfg)
}

/// The same integral in the kernel-form parametrization: with
/// x̃ = z − ½Jz*, ỹ = z + ½Jz*, integrate m₁(q(x̃, w)) m₂(q(w, ỹ)) over
/// w ∈ E. Equals [`compose`] times the constant Jacobian 2^{2n}.
pub fn compose_kernel_form(
    space: &SymplecticSpace,
    m1: &OrderFunction,
    m2: &OrderFunction,
    z: &[f64],
    zs: &[f64],
    cfg: &QuadConfig,
) -> Result<QuadratureReport> {
    let d = space.dim();
    let jzs = &j_matrix(space.n) * DMatrix::from_column_slice(d, 1, zs);
    let xt: Vec<f64> = (0..d).map(|i| z[i] - 0.5 * jzs[(i, 0)]).collect();
    let yt: Vec<f64> = (0..d).map(|i| z[i] + 0.5 * jzs[(i, 0)]).collect();

    let j_inv = -j_matrix(space.n);
    let id = DMatrix::<f64>::identity(d, d);
    // q(x̃, w) = ((x̃+w)/2, J⁻¹(w − x̃))
    let l1 = stack_vertical(&(0.5 * &id), &j_inv);
    let jxt = &j_inv * DMatrix::from_column_slice(d, 1, &xt);
    let mut t1: Vec<f64> = (0..d).map(|i| 0.5 * xt[i]).collect();
    t1.extend((0..d).map(|i| -jxt[(i, 0)]));
    // q(w, ỹ) = ((w+ỹ)/2, J⁻¹(ỹ − w))
    let l2 = stack_vertical(&(0.5 * &id), &(-1.0 * &j_inv));
    let jyt = &j_inv * DMatrix::from_column_slice(d, 1, &yt);
    let mut t2: Vec<f64> = (0..d).map(|i| 0.5 * yt[i]).collect();
    t2.extend((0..d).map(|i| jyt[(i, 0)]));

    let f1 = m1.precompose(&l1, &t1)?;
    let f2 = m2.precompose(&l2, &t2)?;
    let integrand = OrderFunction::product(vec![f1, f2])?;
    let verdict = integrable_on_rd(&integrand.tail_atoms(), d);
    if !verdict.integrable {
        return Err(Error::Divergent {
            what: "composition integral",
            detail: format!("tail excess {:.3}", verdict.worst_excess),
        });
    }
    quadrature::integrate_rd(&|u: &[f64]| integrand.eval(u), d, cfg)
}

#[derive(Debug, Clone, Serialize)]
pub struct TranslateReport {
    /// Measured constant in m₃(ρ+t) ≤ C̃⟨t⟩^{2N₀} m₃(ρ).
    pub c_tilde: f64,
    pub n0: f64,
    pub base_value: f64,
    pub samples: usize,
}

/// Check that the composed weight is again an order function with exponent
/// 2N₀, N₀ = max of the two certificates, by sampling translates of the base
/// point.
pub fn compose_order_check(
    space: &SymplecticSpace,
    m1: &OrderFunction,
    m2: &OrderFunction,
    z: &[f64],
    zs: &[f64],
    samples: usize,
    radius: f64,
    seed: u64,
    cfg: &QuadConfig,
) -> Result<TranslateReport> {
    let n0 = m1.certificate().n0.max(m2.certificate().n0);
    let base = compose(space, m1, m2, z, zs, cfg)?.value;
    let d = space.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c_tilde = 0.0f64;
    for _ in 0..samples {
        let t: Vec<f64> = (0..d).map(|_| rng.gen_range(-radius..radius)).collect();
        let ts: Vec<f64> = (0..d).map(|_| rng.gen_range(-radius..radius)).collect();
        let z2: Vec<f64> = z.iter().zip(&t).map(|(a, b)| a + b).collect();
        let zs2: Vec<f64> = zs.iter().zip(&ts).map(|(a, b)| a + b).collect();
        let shifted = compose(space, m1, m2, &z2, &zs2, cfg)?.value;
        let mut full = t.clone();
        full.extend(ts);
        let ratio = shifted / (bracket(&full).powf(2.0 * n0) * base);
        c_tilde = c_tilde.max(ratio);
    }
    Ok(TranslateReport {
        c_tilde,
        n0,
        base_value: base,
        samples,
    })
}

/// One separable factor m_j = m̃_j(x)·⟨x*⟩^{−N_j} with m̃_j of polynomial
/// growth M_j.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SeparableFactor {
    pub star_decay: f64,
    pub base_growth: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeparableComposeReport {
    /// Fitted-form exponent of the composed weight in ⟨z*⟩.
    pub exponent: f64,
    /// True when an inner (·)₊ argument of the attaining term is exactly 0,
    /// which contributes an extra ln⟨z*⟩ factor.
    pub log_factor: bool,
    /// Both cross terms decay below −2n, so the exponent simplifies to
    /// max(−N₂+M₁, −N₁+M₂).
    pub simplified_regime: bool,
}

/// Closed-form composition exponent for separable weights: the integral
/// converges iff −(N₁+N₂)+M₁+M₂ < −2n, and then the composed weight is
/// O(⟨z*⟩^e) with e = max over the two one-sided terms
/// −N_j' + M_j + (−N_j + M_j' + 2n)₊.
pub fn separable_compose(
    n: usize,
    f1: SeparableFactor,
    f2: SeparableFactor,
) -> Result<SeparableComposeReport> {
    let two_n = 2.0 * n as f64;
    let (n1, m1) = (f1.star_decay, f1.base_growth);
    let (n2, m2) = (f2.star_decay, f2.base_growth);
    let total = -(n1 + n2) + m1 + m2;
    if total >= -two_n {
        return Err(Error::Divergent {
            what: "separable composition",
            detail: format!("−(N₁+N₂)+M₁+M₂ = {total} ≥ −2n = {}", -two_n),
        });
    }
    let inner1 = -n1 + m2 + two_n;
    let inner2 = -n2 + m1 + two_n;
    let e1 = -n2 + m1 + quadrature::pos(inner1);
    let e2 = -n1 + m2 + quadrature::pos(inner2);
    let exponent = e1.max(e2);
    let mut log_factor = false;
    if e1 == exponent && inner1 == 0.0 {
        log_factor = true;
    }
    if e2 == exponent && inner2 == 0.0 {
        log_factor = true;
    }
    let simplified_regime = inner1 < 0.0 && inner2 < 0.0;
    Ok(SeparableComposeReport {
        exponent,
        log_factor,
        simplified_regime,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SchurReport {
    pub row_sup: f64,
    pub col_sup: f64,
    pub row_argmax: Vec<f64>,
    pub col_argmax: Vec<f64>,
    pub truncation_radius: f64,
}

fn chord_fiber_integrand(
    space: &SymplecticSpace,
    m: &OrderFunction,
    base: &[f64],
    row: bool,
) -> Result<OrderFunction> {
    let d = space.dim();
    let id = DMatrix::<f64>::identity(d, d);
    let j_inv = -j_matrix(space.n);
    // row:  u ↦ q(x, x+u) = (x + u/2, J⁻¹u)
    // col:  u ↦ q(y+u, y) = (y + u/2, −J⁻¹u)
    let l = if row {
        stack_vertical(&(0.5 * &id), &j_inv)
    } else {
        stack_vertical(&(0.5 * &id), &(-1.0 * &j_inv))
    };
    let mut t = base.to_vec();
    t.extend(std::iter::repeat(0.0).take(d));
    m.precompose(&l, &t)
}

/// Schur test against the chord pullback: sup_x ∫ m(q(x, y)) dy and the
/// transposed sup. Both finite certifies L² boundedness of any operator whose
/// kernel is dominated by m∘q. The sup is taken over a fixed probe set and
/// checked for growth along the axes; growing row integrals are reported as
/// divergent.
pub fn schur_certificate(
    space: &SymplecticSpace,
    m: &OrderFunction,
    seed: u64,
    cfg: &QuadConfig,
) -> Result<SchurReport> {
    let d = space.dim();
    if m.dim != 2 * d {
        return Err(Error::DimensionMismatch(
            "Schur certificate needs a weight on E×E*".into(),
        ));
    }
    // symbolic fiber-integrability at an arbitrary base point
    let probe0 = vec![0.0; d];
    for row in [true, false] {
        let integrand = chord_fiber_integrand(space, m, &probe0, row)?;
        let verdict = integrable_on_rd(&integrand.tail_atoms(), d);
        if !verdict.integrable {
            return Err(Error::Divergent {
                what: "Schur fiber integral",
                detail: format!("tail excess {:.3}", verdict.worst_excess),
            });
        }
    }
    let fiber = |base: &[f64], row: bool| -> Result<QuadratureReport> {
        let integrand = chord_fiber_integrand(space, m, base, row)?;
        quadrature::integrate_rd(&|u: &[f64]| integrand.eval(u), d, cfg)
    };
    // growth probe along each axis
    for row in [true, false] {
        let v0 = fiber(&probe0, row)?.value;
        for ax in 0..d {
            let mut prev = v0;
            for &r in &[4.0, 8.0, 16.0, 32.0] {
                let mut p = vec![0.0; d];
                p[ax] = r;
                let v = fiber(&p, row)?.value;
                if r >= 16.0 && v > prev * 1.05 && v > v0 * 1.5 {
                    return Err(Error::Divergent {
                        what: "Schur sup",
                        detail: format!(
                            "fiber integral grows along axis {ax}: {v0:.3e} → {v:.3e} at |x| = {r}"
                        ),
                    });
                }
                prev = v;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probes = vec![probe0.clone()];
    for ax in 0..d {
        for &r in &[1.0, 2.0] {
            for sign in [-1.0, 1.0] {
                let mut p = vec![0.0; d];
                p[ax] = sign * r;
                probes.push(p);
            }
        }
    }
    for _ in 0..16 {
        probes.push((0..d).map(|_| rng.gen_range(-4.0..4.0)).collect());
    }
    let mut report = SchurReport {
        row_sup: 0.0,
        col_sup: 0.0,
        row_argmax: probe0.clone(),
        col_argmax: probe0,
        truncation_radius: 0.0,
    };
    for p in &probes {
        let r = fiber(p, true)?;
        if r.value > report.row_sup {
            report.row_sup = r.value;
            report.row_argmax = p.clone();
        }
        report.truncation_radius = report.truncation_radius.max(r.truncation_radius);
        let c = fiber(p, false)?;
        if c.value > report.col_sup {
            report.col_sup = c.value;
            report.col_argmax = p.clone();
        }
    }
    Ok(report)
}

/// ∫_{E*} m(x*) dx* for weights that do not depend on the E slot.
/// The x-independence is structural: any atom touching the first 2n
/// coordinates is rejected.
pub fn l1_fiber_certificate(
    space: &SymplecticSpace,
    m: &OrderFunction,
    cfg: &QuadConfig,
) -> Result<QuadratureReport> {
    let d = space.dim();
    if m.dim != 2 * d {
        return Err(Error::DimensionMismatch(
            "fiber certificate needs a weight on E×E*".into(),
        ));
    }
    let split = m.slot_split(d);
    if !split.first.is_empty() || !split.mixed.is_empty() {
        return Err(Error::InvalidInput(
            "weight depends on the E slot; the fiber integral is not x-free".into(),
        ));
    }
    // embed E* ∋ v ↦ (0, v) ∈ E×E*
    let mut l = DMatrix::<f64>::zeros(2 * d, d);
    for i in 0..d {
        l[(d + i, i)] = 1.0;
    }
    let t = vec![0.0; 2 * d];
    let integrand = m.precompose(&l, &t)?;
    let verdict = integrable_on_rd(&integrand.tail_atoms(), d);
    if !verdict.integrable {
        return Err(Error::Divergent {
            what: "fiber integral",
            detail: format!("tail excess {:.3}", verdict.worst_excess),
        });
    }
    quadrature::integrate_rd(&|u: &[f64]| integrand.eval(u), d, cfg)
}

#[derive(Debug, Clone, Serialize)]
pub struct CpIntegralReport {
    pub p: f64,
    pub value: f64,
    pub truncation_radius: f64,
}

/// Trace-class style criterion ∫_{E*} ‖m(·, x*)‖_{L^p(E)} dx*. Inner and
/// outer divergence are decided from the exponents; the outer decision needs
/// every atom to touch only one slot.
pub fn cp_criterion_integral(
    space: &SymplecticSpace,
    m: &OrderFunction,
    p: f64,
    cfg: &QuadConfig,
) -> Result<CpIntegralReport> {
    let d = space.dim();
    if m.dim != 2 * d {
        return Err(Error::DimensionMismatch(
            "criterion needs a weight on E×E*".into(),
        ));
    }
    if !(p >= 1.0) {
        return Err(Error::InvalidInput(format!("p must be in [1, ∞], got {p}")));
    }
    let split = m.slot_split(d);
    if !split.mixed.is_empty() {
        return Err(Error::InvalidInput(
            "atoms mixing the E and E* slots are not supported by the separable criterion".into(),
        ));
    }
    // inner factor: ‖Π first-slot atoms‖_{L^p(E)} (or sup for p = ∞)
    let x_part = |x: &[f64]| eval_atoms(&split.first, &{
        let mut full = x.to_vec();
        full.extend(std::iter::repeat(0.0).take(d));
        full
    });
    let inner = if p.is_infinite() {
        // polynomial-growth atoms make the sup infinite
        let growth: f64 = split
            .first
            .iter()
            .filter(|a| {
                let lin = a.affine.linear();
                (0..d).any(|j| lin.column(j).norm() > 1e-14)
            })
            .map(|a| a.exponent)
            .sum();
        if growth > 1e-12 {
            return Err(Error::Divergent {
                what: "inner sup",
                detail: "net polynomial growth in the E slot".into(),
            });
        }
        let mut sup = 0.0f64;
        for r in [2.0f64, 4.0, 8.0, 16.0] {
            let steps = 41;
            let mut idx = vec![0usize; d];
            loop {
                let x: Vec<f64> = idx
                    .iter()
                    .map(|&i| -r + 2.0 * r * i as f64 / (steps - 1) as f64)
                    .collect();
                sup = sup.max(x_part(&x));
                let mut ax = d;
                while ax > 0 {
                    ax -= 1;
                    idx[ax] += 1;
                    if idx[ax] < steps {
                        break;
                    }
                    idx[ax] = 0;
                    if ax == 0 {
                        ax = usize::MAX;
                        break;
                    }
                }
                if ax == usize::MAX {
                    break;
                }
            }
            if r > 2.0 {
                // decaying atoms attain their sup on the first boxes
            }
        }
        sup
    } else {
        let atoms: Vec<TailAtom> = split
            .first
            .iter()
            .map(|a| {
                let lin = a.affine.linear();
                TailAtom {
                    linear: DMatrix::from_fn(lin.nrows(), d, |i, j| lin[(i, j)]),
                    exponent: a.exponent * p,
                }
            })
            .collect();
        let verdict = integrable_on_rd(&atoms, d);
        if !verdict.integrable {
            return Err(Error::Divergent {
                what: "inner L^p integral",
                detail: format!("tail excess {:.3}", verdict.worst_excess),
            });
        }
        let rep = quadrature::integrate_rd(&|x: &[f64]| x_part(x).powf(p), d, cfg)?;
        rep.value.powf(1.0 / p)
    };
    // outer integral of the second-slot factor
    let star_part = |v: &[f64]| {
        let mut full = vec![0.0; d];
        full.extend_from_slice(v);
        eval_atoms(&split.second, &full)
    };
    let atoms: Vec<TailAtom> = split
        .second
        .iter()
        .map(|a| {
            let lin = a.affine.linear();
            TailAtom {
                linear: DMatrix::from_fn(lin.nrows(), d, |i, j| lin[(i, d + j)]),
                exponent: a.exponent,
            }
        })
        .collect();
    let verdict = integrable_on_rd(&atoms, d);
    if !verdict.integrable {
        return Err(Error::Divergent {
            what: "outer E* integral",
            detail: format!("tail excess {:.3}", verdict.worst_excess),
        });
    }
    let rep = quadrature::integrate_rd(&|v: &[f64]| star_part(v), d, cfg)?;
    Ok(CpIntegralReport {
        p,
        value: split.scalar * inner * rep.value,
        truncation_radius: rep.truncation_radius,
    })
}

//! Functional observer design for linear plants.
//!
//! Given `x(k+1) = F x`, `y = H x`, `z = q x` and a desired characteristic
//! polynomial of order `v`, an observer exists iff the row
//! `q F^v + α1 q F^(v-1) + … + αv q` is a linear combination of the rows
//! `H_j F^i`. The coefficients of that combination (the β rows) determine
//! `(A, B, C, D)` in observer canonical form and the map `T` with
//! `T F = A T + B H`, `q = C T + D H`.

use nalgebra::{DMatrix, DVector, RowDVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{inf_norm, min_norm_lstsq};
use crate::model::{observability_stack, LinearSystem};
use crate::spectrum::{companion_realization, poly_from_eigenvalues, CharPoly};

/// Relative tolerance for accepting the least-squares fit as exact.
pub const DEFAULT_FEAS_TOL: f64 = 1e-9;
/// Relative tolerance for certifying `T F = A T + B H` and `q = C T + D H`.
pub const CERTIFY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignOptions {
    pub feas_tol: f64,
    /// Restrict the span to `H_j F^i`, `i < v`, which forces `β0 = 0` and
    /// hence `D = 0`.
    pub strict_span: bool,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            feas_tol: DEFAULT_FEAS_TOL,
            strict_span: false,
        }
    }
}

/// Rows `β0, …, βv`, each `1 x p`. `β_i` multiplies `H F^(v-i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaCoefficients {
    rows: Vec<RowDVector<f64>>,
}

impl BetaCoefficients {
    pub fn new(rows: Vec<RowDVector<f64>>) -> Result<Self> {
        let width = rows.first().map_or(0, |r| r.ncols());
        if rows.len() < 2 || width == 0 {
            return Err(Error::Dimension(format!(
                "need at least two beta rows of positive width, got {} rows",
                rows.len()
            )));
        }
        if rows.iter().any(|r| r.ncols() != width) {
            return Err(Error::Dimension("beta rows have different widths".into()));
        }
        if rows.iter().flat_map(|r| r.iter()).any(|b| !b.is_finite()) {
            return Err(Error::Format("non-finite beta entry".into()));
        }
        Ok(Self { rows })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        Self::new(rows.iter().map(|r| RowDVector::from_row_slice(r)).collect())
    }

    /// Observer order `v` (one less than the number of rows).
    pub fn order(&self) -> usize {
        self.rows.len() - 1
    }

    pub fn width(&self) -> usize {
        self.rows[0].ncols()
    }

    /// `β_i`.
    pub fn row(&self, i: usize) -> &RowDVector<f64> {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[RowDVector<f64>] {
        &self.rows
    }

    /// Entries flattened in `β0, β1, …` order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.rows.iter().flat_map(|r| r.iter().copied()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.iter().fold(0.0_f64, |m, b| m.max(b.abs())))
            .fold(0.0, f64::max)
    }
}

/// Linear functional observer `ξ(k+1) = A ξ + B y`, `ẑ = C ξ + D y`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverRealization {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: RowDVector<f64>,
    pub d: RowDVector<f64>,
}

impl ObserverRealization {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: RowDVector<f64>,
        d: RowDVector<f64>,
    ) -> Result<Self> {
        let v = a.nrows();
        let p = b.ncols();
        if v == 0 || a.ncols() != v || b.nrows() != v || c.ncols() != v || d.ncols() != p {
            return Err(Error::Dimension(format!(
                "inconsistent observer: A {}x{}, B {}x{}, C 1x{}, D 1x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                c.ncols(),
                d.ncols()
            )));
        }
        Ok(Self { a, b, c, d })
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Rebuilds `β0 = D`, `β_k = Σ_{i<k} α_i C A^(k-1-i) B + α_k D`.
    pub fn implied_beta(&self, cp: &CharPoly) -> Result<BetaCoefficients> {
        let v = self.order();
        if cp.order() != v {
            return Err(Error::Dimension(format!(
                "polynomial order {} differs from observer order {v}",
                cp.order()
            )));
        }
        // markov[m] = C A^m B
        let mut markov = Vec::with_capacity(v);
        let mut ca = self.c.clone();
        for _ in 0..v {
            markov.push(&ca * &self.b);
            ca = &ca * &self.a;
        }
        let rows = (0..=v)
            .map(|k| {
                let mut row = &self.d * cp.coeff(k);
                for i in 0..k {
                    row += &markov[k - 1 - i] * cp.coeff(i);
                }
                row
            })
            .collect();
        BetaCoefficients::new(rows)
    }
}

/// `T` as a `v x n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTransformation {
    pub t: DMatrix<f64>,
}

impl LinearTransformation {
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.t * x
    }
}

/// Rows `H_j F^i` for `i = 0..=v` (or `i < v` in strict mode), power-major.
pub fn build_condition_matrix(sys: &LinearSystem, v: usize, strict_span: bool) -> DMatrix<f64> {
    let blocks = if strict_span { v } else { v + 1 };
    observability_stack(sys, blocks)
}

/// `q F^v + α1 q F^(v-1) + … + αv q`.
pub fn target_row(sys: &LinearSystem, cp: &CharPoly) -> RowDVector<f64> {
    let v = cp.order();
    let mut powers = Vec::with_capacity(v + 1);
    let mut qf = sys.q().clone();
    for _ in 0..=v {
        powers.push(qf.clone());
        qf = &qf * sys.f();
    }
    let mut g = RowDVector::zeros(sys.n());
    for i in 0..=v {
        g += &powers[v - i] * cp.coeff(i);
    }
    g
}

#[derive(Debug, Clone, PartialEq)]
pub enum BetaOutcome {
    Feasible {
        beta: BetaCoefficients,
        residual: f64,
    },
    Infeasible {
        residual: f64,
    },
}

impl BetaOutcome {
    pub fn residual(&self) -> f64 {
        match self {
            Self::Feasible { residual, .. } | Self::Infeasible { residual } => *residual,
        }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self, Self::Feasible { .. })
    }
}

/// Least-squares solve for β; minimum-norm among exact solutions.
pub fn solve_beta(sys: &LinearSystem, cp: &CharPoly, opts: &DesignOptions) -> Result<BetaOutcome> {
    let v = cp.order();
    let p = sys.p();
    if v == 0 {
        return Err(Error::Dimension("observer order must be at least 1".into()));
    }
    let m = build_condition_matrix(sys, v, opts.strict_span);
    let g = target_row(sys, cp);
    let (w, _) = min_norm_lstsq(&m.transpose(), &g.transpose());
    let fit = w.transpose() * &m;
    let residual = (&g - &fit).iter().fold(0.0_f64, |acc, e| acc.max(e.abs()));
    let g_norm = g.iter().fold(0.0_f64, |acc, e| acc.max(e.abs()));
    if residual > opts.feas_tol * g_norm.max(1.0) {
        return Ok(BetaOutcome::Infeasible { residual });
    }
    // block i of w multiplies H F^i, i.e. it is β_(v-i)
    let rows = (0..=v)
        .map(|k| {
            if opts.strict_span && k == 0 {
                return RowDVector::zeros(p);
            }
            let block = v - k;
            RowDVector::from_iterator(p, w.rows(block * p, p).iter().copied())
        })
        .collect();
    Ok(BetaOutcome::Feasible {
        beta: BetaCoefficients::new(rows)?,
        residual,
    })
}

/// `(A, B, C, D)` in observer canonical form from α and β.
pub fn realize_observer(cp: &CharPoly, beta: &BetaCoefficients) -> Result<ObserverRealization> {
    let v = cp.order();
    if beta.order() != v {
        return Err(Error::Dimension(format!(
            "beta has order {}, polynomial has order {v}",
            beta.order()
        )));
    }
    let (a, c) = companion_realization(cp);
    let p = beta.width();
    let beta0 = beta.row(0);
    let mut b = DMatrix::zeros(v, p);
    for r in 0..v {
        let k = v - r;
        b.row_mut(r).copy_from(&(beta.row(k) - beta0 * cp.coeff(k)));
    }
    ObserverRealization::new(a, b, c, beta0.clone())
}

/// Rows of `T` from the bottom up: `T_v = -β0 H + q`,
/// `T_(v-1) = -β0 H F - β1 H + q F + α1 q`, and so on.
pub fn build_t(
    sys: &LinearSystem,
    cp: &CharPoly,
    beta: &BetaCoefficients,
) -> Result<LinearTransformation> {
    let v = cp.order();
    if beta.order() != v || beta.width() != sys.p() {
        return Err(Error::Dimension(format!(
            "beta is {}x{}, expected {}x{}",
            beta.order() + 1,
            beta.width(),
            v + 1,
            sys.p()
        )));
    }
    let n = sys.n();
    let mut hf = Vec::with_capacity(v);
    let mut qf = Vec::with_capacity(v);
    let (mut h_pow, mut q_pow) = (sys.h().clone(), sys.q().clone());
    for _ in 0..v {
        hf.push(h_pow.clone());
        qf.push(q_pow.clone());
        h_pow = &h_pow * sys.f();
        q_pow = &q_pow * sys.f();
    }
    let mut t = DMatrix::zeros(v, n);
    for k in 0..v {
        let mut row = RowDVector::zeros(n);
        for i in 0..=k {
            row += &qf[k - i] * cp.coeff(i);
            row -= beta.row(i) * &hf[k - i];
        }
        t.row_mut(v - 1 - k).copy_from(&row);
    }
    Ok(LinearTransformation { t })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LuenbergerResiduals {
    /// `‖T F - A T - B H‖∞`
    pub res_dyn: f64,
    /// `‖q - C T - D H‖∞`
    pub res_out: f64,
    pub certified: bool,
}

pub fn verify_luenberger(
    sys: &LinearSystem,
    obs: &ObserverRealization,
    t: &LinearTransformation,
) -> Result<LuenbergerResiduals> {
    let v = obs.order();
    if t.t.shape() != (v, sys.n()) || obs.output_dim() != sys.p() {
        return Err(Error::Dimension(format!(
            "T is {}x{}, observer order {v} with {} inputs, plant n={} p={}",
            t.t.nrows(),
            t.t.ncols(),
            obs.output_dim(),
            sys.n(),
            sys.p()
        )));
    }
    let dyn_res = &t.t * sys.f() - &obs.a * &t.t - &obs.b * sys.h();
    let out_res = sys.q() - &obs.c * &t.t - &obs.d * sys.h();
    let res_dyn = inf_norm(&dyn_res);
    let res_out = out_res.iter().map(|e| e.abs()).sum::<f64>();
    let bound = CERTIFY_TOL * inf_norm(&t.t).max(1.0);
    Ok(LuenbergerResiduals {
        res_dyn,
        res_out,
        certified: res_dyn <= bound && res_out <= bound,
    })
}

/// A complete linear design.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDesign {
    pub poly: CharPoly,
    pub beta: BetaCoefficients,
    pub observer: ObserverRealization,
    pub transformation: LinearTransformation,
    pub feasibility_residual: f64,
    pub residuals: LuenbergerResiduals,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DesignOutcome {
    Feasible(Box<LinearDesign>),
    Infeasible { residual: f64 },
}

/// `solve_beta → realize_observer → build_t → verify_luenberger`.
pub fn design(sys: &LinearSystem, cp: &CharPoly, opts: &DesignOptions) -> Result<DesignOutcome> {
    match solve_beta(sys, cp, opts)? {
        BetaOutcome::Infeasible { residual } => Ok(DesignOutcome::Infeasible { residual }),
        BetaOutcome::Feasible { beta, residual } => {
            let observer = realize_observer(cp, &beta)?;
            let transformation = build_t(sys, cp, &beta)?;
            let residuals = verify_luenberger(sys, &observer, &transformation)?;
            Ok(DesignOutcome::Feasible(Box::new(LinearDesign {
                poly: cp.clone(),
                beta,
                observer,
                transformation,
                feasibility_residual: residual,
                residuals,
            })))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SearchOutcome {
    Found {
        v_min: usize,
        design: Box<LinearDesign>,
    },
    NoneUpTo {
        v_max: usize,
    },
}

/// Tries orders `1, 2, …` with `eigen_sets[v - 1]` as the spectrum for
/// order `v`, returning the first feasible design.
pub fn minimal_order_search(
    sys: &LinearSystem,
    eigen_sets: &[Vec<Complex64>],
    opts: &DesignOptions,
) -> Result<SearchOutcome> {
    for (idx, roots) in eigen_sets.iter().enumerate() {
        let v = idx + 1;
        if roots.len() != v {
            return Err(Error::Dimension(format!(
                "eigenvalue list for order {v} has {} entries",
                roots.len()
            )));
        }
        let cp = poly_from_eigenvalues(roots)?;
        if let DesignOutcome::Feasible(design) = design(sys, &cp, opts)? {
            return Ok(SearchOutcome::Found { v_min: v, design });
        }
    }
    Ok(SearchOutcome::NoneUpTo {
        v_max: eigen_sets.len(),
    })
}

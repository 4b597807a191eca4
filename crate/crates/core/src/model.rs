//! Autonomous discrete-time plants `x(k+1) = F(x(k))`, `y = H(x)`, `z = q(x)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, numerical_rank};

/// Common interface over linear and nonlinear plants.
///
/// Implementations are immutable and must be reentrant: the sampled
/// verification routines evaluate them from several threads.
pub trait SystemModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// State map `F`.
    fn step(&self, x: &DVector<f64>) -> DVector<f64>;
    /// Measured outputs `H(x)`.
    fn output(&self, x: &DVector<f64>) -> DVector<f64>;
    /// Target functional `q(x)`.
    fn functional(&self, x: &DVector<f64>) -> f64;
}

/// `x(k+1) = F x(k)`, `y = H x`, `z = q x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    f: DMatrix<f64>,
    h: DMatrix<f64>,
    q: RowDVector<f64>,
}

impl LinearSystem {
    pub fn new(f: DMatrix<f64>, h: DMatrix<f64>, q: RowDVector<f64>) -> Result<Self> {
        let n = f.nrows();
        if n == 0 || f.ncols() != n {
            return Err(Error::Dimension(format!(
                "F must be square and non-empty, got {}x{}",
                f.nrows(),
                f.ncols()
            )));
        }
        let p = h.nrows();
        if h.ncols() != n || p == 0 || p > n {
            return Err(Error::Dimension(format!(
                "H must be p x {n} with 1 <= p <= {n}, got {}x{}",
                h.nrows(),
                h.ncols()
            )));
        }
        if q.ncols() != n {
            return Err(Error::Dimension(format!(
                "q must be 1 x {n}, got 1x{}",
                q.ncols()
            )));
        }
        if f.iter()
            .chain(h.iter())
            .chain(q.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidSystem("non-finite matrix entry".into()));
        }
        Ok(Self { f, h, q })
    }

    /// Row-major convenience constructor.
    pub fn from_rows(f: &[&[f64]], h: &[&[f64]], q: &[f64]) -> Result<Self> {
        Self::new(
            rows_to_matrix(f)?,
            rows_to_matrix(h)?,
            RowDVector::from_row_slice(q),
        )
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn q(&self) -> &RowDVector<f64> {
        &self.q
    }

    pub fn n(&self) -> usize {
        self.f.nrows()
    }

    pub fn p(&self) -> usize {
        self.h.nrows()
    }

    /// The same plant behind the callable interface, with a region for
    /// sampled checks.
    pub fn to_nonlinear(&self, domain: DomainBox) -> Result<NonlinearSystem> {
        let (f, h, q) = (self.f.clone(), self.h.clone(), self.q.clone());
        NonlinearSystem::new(
            self.n(),
            self.p(),
            move |x| &f * x,
            move |x| &h * x,
            move |x| (&q * x)[0],
            domain,
        )
    }
}

pub(crate) fn rows_to_matrix(rows: &[&[f64]]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl SystemModel for LinearSystem {
    fn state_dim(&self) -> usize {
        self.n()
    }

    fn output_dim(&self) -> usize {
        self.p()
    }

    fn step(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.f * x
    }

    fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.h * x
    }

    fn functional(&self, x: &DVector<f64>) -> f64 {
        (&self.q * x)[0]
    }
}

/// Per-coordinate bounds of the region where a nonlinear design is checked.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Dimension(format!(
                "domain box bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidSystem(format!(
                    "domain box coordinate {} needs finite lower < upper, got [{lo}, {hi}]",
                    i + 1
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// Box `center ± half_width` per coordinate.
    pub fn around(center: &[f64], half_width: &[f64]) -> Result<Self> {
        if center.len() != half_width.len() {
            return Err(Error::Dimension(
                "center and half-width lengths differ".into(),
            ));
        }
        Self::new(
            center.iter().zip(half_width).map(|(c, w)| c - w).collect(),
            center.iter().zip(half_width).map(|(c, w)| c + w).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }
}

type VecMap = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type ScalarMap = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;

/// Plant given by callables `F: R^n -> R^n`, `H: R^n -> R^p`, `q: R^n -> R`.
#[derive(Clone)]
pub struct NonlinearSystem {
    n: usize,
    p: usize,
    f: VecMap,
    h: VecMap,
    q: ScalarMap,
    domain: DomainBox,
}

impl NonlinearSystem {
    pub fn new(
        n: usize,
        p: usize,
        f: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        h: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        q: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        domain: DomainBox,
    ) -> Result<Self> {
        if n == 0 || p == 0 {
            return Err(Error::Dimension("n and p must be positive".into()));
        }
        if domain.dim() != n {
            return Err(Error::Dimension(format!(
                "domain box has dimension {}, state has {n}",
                domain.dim()
            )));
        }
        Ok(Self {
            n,
            p,
            f: Arc::new(f),
            h: Arc::new(h),
            q: Arc::new(q),
            domain,
        })
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    /// Evaluates `F`, `H` and `q` at the box corners and centre, checking
    /// dimensions and finiteness.
    pub fn check_at_box_points(&self) -> Result<()> {
        let lo = DVector::from_column_slice(self.domain.lower());
        let hi = DVector::from_column_slice(self.domain.upper());
        let mid = (&lo + &hi) * 0.5;
        for x in [lo, mid, hi] {
            let fx = self.step(&x);
            let hx = self.output(&x);
            if fx.len() != self.n || hx.len() != self.p {
                return Err(Error::Dimension(format!(
                    "F returned {} entries (expected {}), H returned {} (expected {})",
                    fx.len(),
                    self.n,
                    hx.len(),
                    self.p
                )));
            }
            if !all_finite(&fx) || !all_finite(&hx) || !self.functional(&x).is_finite() {
                return Err(Error::EvaluationOverflow {
                    state: x.iter().copied().collect(),
                    what: "system maps".into(),
                });
            }
        }
        Ok(())
    }
}

impl fmt::Debug for NonlinearSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonlinearSystem")
            .field("n", &self.n)
            .field("p", &self.p)
            .field("domain", &self.domain)
            .finish_non_exhaustive()
    }
}

impl SystemModel for NonlinearSystem {
    fn state_dim(&self) -> usize {
        self.n
    }

    fn output_dim(&self) -> usize {
        self.p
    }

    fn step(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.f)(x)
    }

    fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.h)(x)
    }

    fn functional(&self, x: &DVector<f64>) -> f64 {
        (self.q)(x)
    }
}

fn check_state(sys: &dyn SystemModel, x: &DVector<f64>) -> Result<()> {
    if x.len() != sys.state_dim() {
        return Err(Error::Dimension(format!(
            "state has {} entries, system has n = {}",
            x.len(),
            sys.state_dim()
        )));
    }
    Ok(())
}

/// `F^j(x)`, with `F^0(x) = x`.
pub fn iterate_map(sys: &dyn SystemModel, j: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_state(sys, x)?;
    let mut state = x.clone();
    for i in 1..=j {
        state = sys.step(&state);
        if !all_finite(&state) {
            return Err(Error::NumericOverflow { iterate: i });
        }
    }
    Ok(state)
}

/// `q F^i(x)` and `H F^i(x)` for `i = 0..=v`, from a single pass over the
/// iterates.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalSequence {
    pub q: Vec<f64>,
    pub h: Vec<DVector<f64>>,
}

pub fn functional_sequence(
    sys: &dyn SystemModel,
    v: usize,
    x: &DVector<f64>,
) -> Result<FunctionalSequence> {
    check_state(sys, x)?;
    let mut q = Vec::with_capacity(v + 1);
    let mut h = Vec::with_capacity(v + 1);
    let mut state = x.clone();
    for i in 0..=v {
        if i > 0 {
            state = sys.step(&state);
        }
        let qi = sys.functional(&state);
        let hi = sys.output(&state);
        if !all_finite(&state) || !qi.is_finite() || !all_finite(&hi) {
            return Err(Error::NumericOverflow { iterate: i });
        }
        q.push(qi);
        h.push(hi);
    }
    Ok(FunctionalSequence { q, h })
}

/// Stacked rows `H F^i`, `i = 0..blocks`, ordered power-major then output.
pub fn observability_stack(sys: &LinearSystem, blocks: usize) -> DMatrix<f64> {
    let (n, p) = (sys.n(), sys.p());
    let mut m = DMatrix::zeros(blocks * p, n);
    let mut hf = sys.h().clone();
    for i in 0..blocks {
        m.rows_mut(i * p, p).copy_from(&hf);
        hf = &hf * sys.f();
    }
    m
}

/// Smallest `v_o` for which the rows `H_j F^i`, `i < v_o`, reach rank `n`;
/// `None` when the system is unobservable.
pub fn observability_index(sys: &LinearSystem) -> Option<usize> {
    let n = sys.n();
    (1..=n).find(|&blocks| numerical_rank(&observability_stack(sys, blocks)) == n)
}

//! Sampled verification and construction for nonlinear plants.
//!
//! The existence condition is an identity in `x`; here it is checked on a
//! finite sample of a box, so a passing result is only ever "verified on
//! domain_box".

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{min_norm_lstsq, vec_max_abs};
use crate::linear_design::{BetaCoefficients, LinearTransformation, ObserverRealization};
use crate::model::{functional_sequence, DomainBox, FunctionalSequence, SystemModel};
use crate::spectrum::CharPoly;

/// Relative threshold for exact identities evaluated in floating point.
pub const IDENTITY_TOL: f64 = 1e-8;
/// Relative threshold for accepting a fitted β.
pub const FIT_VALIDATION_TOL: f64 = 1e-6;
pub const DEFAULT_SAMPLE_COUNT: usize = 1000;
pub const DOMAIN_LABEL: &str = "verified on domain_box only";

/// Uniform sample of a box, reproducible from its seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    points: Vec<DVector<f64>>,
    seed: u64,
}

impl SampleSet {
    pub fn uniform(domain: &DomainBox, count: usize, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(Error::Dimension("sample count must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = (0..count)
            .map(|_| {
                DVector::from_iterator(
                    domain.dim(),
                    domain
                        .lower()
                        .iter()
                        .zip(domain.upper())
                        .map(|(lo, hi)| lo + (hi - lo) * rng.gen::<f64>()),
                )
            })
            .collect();
        Ok(Self { points, seed })
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn count(&self) -> usize {
        self.points.len()
    }
}

fn with_state<T>(x: &DVector<f64>, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::NumericOverflow { iterate } => Error::EvaluationOverflow {
            state: x.iter().copied().collect(),
            what: format!("iterate {iterate} of F"),
        },
        other => other,
    })
}

fn check_dims(sys: &dyn SystemModel, cp: &CharPoly, beta: &BetaCoefficients) -> Result<()> {
    if beta.order() != cp.order() || beta.width() != sys.output_dim() {
        return Err(Error::Dimension(format!(
            "beta is {}x{}, expected {}x{}",
            beta.order() + 1,
            beta.width(),
            cp.order() + 1,
            sys.output_dim()
        )));
    }
    Ok(())
}

fn target(seq: &FunctionalSequence, cp: &CharPoly) -> f64 {
    let v = cp.order();
    (0..=v).map(|i| cp.coeff(i) * seq.q[v - i]).sum()
}

fn combination(seq: &FunctionalSequence, beta: &BetaCoefficients) -> f64 {
    let v = beta.order();
    (0..=v)
        .map(|i| beta.row(i).transpose().dot(&seq.h[v - i]))
        .sum()
}

/// `[qF^v(x) + Σ α_i qF^(v-i)(x)] - [Σ β_i H F^(v-i)(x)]`.
pub fn residual_51(
    sys: &dyn SystemModel,
    cp: &CharPoly,
    beta: &BetaCoefficients,
    x: &DVector<f64>,
) -> Result<f64> {
    check_dims(sys, cp, beta)?;
    let seq = with_state(x, functional_sequence(sys, cp.order(), x))?;
    Ok(target(&seq, cp) - combination(&seq, beta))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionReport {
    pub max_residual: f64,
    /// `max(1, max |target|)` over the samples.
    pub scale: f64,
    pub satisfied: bool,
}

/// Maximum `|residual_51|` over a sample set.
pub fn check_condition(
    sys: &dyn SystemModel,
    cp: &CharPoly,
    beta: &BetaCoefficients,
    samples: &SampleSet,
) -> Result<ConditionReport> {
    check_dims(sys, cp, beta)?;
    let pairs = samples
        .points()
        .par_iter()
        .map(|x| {
            let seq = with_state(x, functional_sequence(sys, cp.order(), x))?;
            let t = target(&seq, cp);
            Ok((t - combination(&seq, beta), t))
        })
        .collect::<Result<Vec<_>>>()?;
    let max_residual = pairs.iter().fold(0.0_f64, |m, (r, _)| m.max(r.abs()));
    let scale = pairs.iter().fold(1.0_f64, |m, (_, t)| m.max(t.abs()));
    Ok(ConditionReport {
        max_residual,
        scale,
        satisfied: max_residual <= IDENTITY_TOL * scale,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub beta: BetaCoefficients,
    pub train_residual: f64,
    pub validation_residual: f64,
    /// `max(1, max |target|)` over the validation set.
    pub scale: f64,
    /// Numerical rank of the stacked least-squares matrix.
    pub rank: usize,
    pub unknowns: usize,
    pub candidate: bool,
    pub label: &'static str,
}

impl FitReport {
    /// True when the stack did not pin β down; the returned β is then the
    /// minimum-norm representative.
    pub fn degenerate(&self) -> bool {
        self.rank < self.unknowns
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.degenerate() {
            w.push(format!(
                "least-squares stack has rank {} < {} unknowns; returning the minimum-norm beta",
                self.rank, self.unknowns
            ));
        }
        w
    }
}

fn fit_rows(
    sys: &dyn SystemModel,
    cp: &CharPoly,
    samples: &SampleSet,
) -> Result<Vec<(Vec<f64>, f64)>> {
    let v = cp.order();
    samples
        .points()
        .par_iter()
        .map(|x| {
            let seq = with_state(x, functional_sequence(sys, v, x))?;
            let row = (0..=v).flat_map(|i| seq.h[v - i].iter().copied()).collect();
            Ok((row, target(&seq, cp)))
        })
        .collect()
}

/// Least-squares fit of β from `residual_51 = 0` stacked over the training
/// points, checked on a separate validation set.
pub fn fit_beta(
    sys: &dyn SystemModel,
    cp: &CharPoly,
    train: &SampleSet,
    validate: &SampleSet,
) -> Result<FitReport> {
    let (v, p) = (cp.order(), sys.output_dim());
    let unknowns = (v + 1) * p;
    if train.count() < unknowns {
        return Err(Error::Dimension(format!(
            "need at least {unknowns} training points, got {}",
            train.count()
        )));
    }
    let rows = fit_rows(sys, cp, train)?;
    let a = DMatrix::from_fn(rows.len(), unknowns, |i, j| rows[i].0[j]);
    let b = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    let (w, rank) = min_norm_lstsq(&a, &b);
    let beta = BetaCoefficients::new(
        (0..=v)
            .map(|i| nalgebra::RowDVector::from_iterator(p, w.rows(i * p, p).iter().copied()))
            .collect(),
    )?;
    let train_residual = vec_max_abs(&(&b - &a * &w));
    let val = check_condition(sys, cp, &beta, validate)?;
    Ok(FitReport {
        beta,
        train_residual,
        validation_residual: val.max_residual,
        scale: val.scale,
        rank,
        unknowns,
        candidate: val.max_residual <= FIT_VALIDATION_TOL * val.scale,
        label: DOMAIN_LABEL,
    })
}

/// A map `T: R^n -> R^v` usable as the observer's invariant manifold.
pub trait Transformation: Send + Sync {
    fn order(&self) -> usize;
    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
}

impl Transformation for LinearTransformation {
    fn order(&self) -> usize {
        self.t.nrows()
    }

    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.t.ncols() {
            return Err(Error::Dimension(format!(
                "T expects {} states, got {}",
                self.t.ncols(),
                x.len()
            )));
        }
        Ok(self.apply(x))
    }
}

/// Components `T_1, …, T_v` built from compositions with `F`:
/// `T_v = -β0 H + q`, `T_(v-1) = -β0 H∘F - β1 H + q∘F + α1 q`, …
pub struct NonlinearTransformation<'a> {
    sys: &'a dyn SystemModel,
    cp: CharPoly,
    beta: BetaCoefficients,
}

impl<'a> NonlinearTransformation<'a> {
    pub fn poly(&self) -> &CharPoly {
        &self.cp
    }

    pub fn beta(&self) -> &BetaCoefficients {
        &self.beta
    }

    /// Component `T_r`, `r` in `1..=v`.
    pub fn component(&self, r: usize, x: &DVector<f64>) -> Result<f64> {
        let v = self.cp.order();
        if r == 0 || r > v {
            return Err(Error::Dimension(format!("component {r} outside 1..={v}")));
        }
        let k = v - r;
        let seq = with_state(x, functional_sequence(self.sys, k, x))?;
        Ok(self.component_from(&seq, k))
    }

    fn component_from(&self, seq: &FunctionalSequence, k: usize) -> f64 {
        (0..=k)
            .map(|i| {
                self.cp.coeff(i) * seq.q[k - i] - self.beta.row(i).transpose().dot(&seq.h[k - i])
            })
            .sum()
    }
}

impl Transformation for NonlinearTransformation<'_> {
    fn order(&self) -> usize {
        self.cp.order()
    }

    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let v = self.cp.order();
        let seq = with_state(x, functional_sequence(self.sys, v - 1, x))?;
        // row v-1-k holds T_(v-k)
        let mut t = DVector::zeros(v);
        for k in 0..v {
            t[v - 1 - k] = self.component_from(&seq, k);
        }
        Ok(t)
    }
}

pub fn build_t_nonlinear<'a>(
    sys: &'a dyn SystemModel,
    cp: &CharPoly,
    beta: &BetaCoefficients,
) -> Result<NonlinearTransformation<'a>> {
    check_dims(sys, cp, beta)?;
    Ok(NonlinearTransformation {
        sys,
        cp: cp.clone(),
        beta: beta.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignConditionReport {
    /// `max ‖T(F(x)) - A T(x) - B H(x)‖∞`
    pub max_res_42: f64,
    /// `max |q(x) - C T(x) - D H(x)|`
    pub max_res_43: f64,
    /// `max(1, ‖T(x)‖∞, |q(x)|)` over the samples.
    pub scale: f64,
    pub certified: bool,
}

pub fn verify_design_conditions(
    sys: &dyn SystemModel,
    obs: &ObserverRealization,
    t: &dyn Transformation,
    samples: &SampleSet,
) -> Result<DesignConditionReport> {
    if t.order() != obs.order() || obs.output_dim() != sys.output_dim() {
        return Err(Error::Dimension(format!(
            "T has order {}, observer order {} with {} inputs, plant p = {}",
            t.order(),
            obs.order(),
            obs.output_dim(),
            sys.output_dim()
        )));
    }
    let per_point = samples
        .points()
        .par_iter()
        .map(|x| {
            let tx = t.eval(x)?;
            let fx = sys.step(x);
            let tfx = t.eval(&fx)?;
            let hx = sys.output(x);
            let qx = sys.functional(x);
            let r42 = vec_max_abs(&(tfx - &obs.a * &tx - &obs.b * &hx));
            let r43 = (qx - (&obs.c * &tx)[0] - (&obs.d * &hx)[0]).abs();
            if !(r42.is_finite() && r43.is_finite()) {
                return Err(Error::EvaluationOverflow {
                    state: x.iter().copied().collect(),
                    what: "design conditions".into(),
                });
            }
            Ok((r42, r43, vec_max_abs(&tx).max(qx.abs())))
        })
        .collect::<Result<Vec<_>>>()?;
    let max_res_42 = per_point.iter().fold(0.0_f64, |m, r| m.max(r.0));
    let max_res_43 = per_point.iter().fold(0.0_f64, |m, r| m.max(r.1));
    let scale = per_point.iter().fold(1.0_f64, |m, r| m.max(r.2));
    Ok(DesignConditionReport {
        max_res_42,
        max_res_43,
        scale,
        certified: max_res_42 <= IDENTITY_TOL * scale && max_res_43 <= IDENTITY_TOL * scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear_design::realize_observer;
    use crate::model::NonlinearSystem;

    fn identity_plant() -> NonlinearSystem {
        NonlinearSystem::new(
            2,
            2,
            |x| x.clone(),
            |x| x.clone(),
            |x| x[0],
            DomainBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap(),
        )
        .unwrap()
    }

    fn quadratic_plant() -> NonlinearSystem {
        NonlinearSystem::new(
            1,
            1,
            |x| x * 0.9,
            |x| x.clone(),
            |x| x[0] * x[0],
            DomainBox::new(vec![-2.0], vec![2.0]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn samples_are_reproducible_and_inside() {
        let dom = DomainBox::new(vec![-1.0, 10.0], vec![1.0, 30.0]).unwrap();
        let a = SampleSet::uniform(&dom, 200, 7).unwrap();
        let b = SampleSet::uniform(&dom, 200, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.points().iter().all(|x| dom.contains(x)));
        assert_ne!(a, SampleSet::uniform(&dom, 200, 8).unwrap());
        assert!(SampleSet::uniform(&dom, 0, 1).is_err());
    }

    #[test]
    fn identity_plant_has_exact_design() {
        let sys = identity_plant();
        let cp = CharPoly::from_coefficients(vec![0.0]).unwrap();
        let beta = BetaCoefficients::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]).unwrap();
        let obs = realize_observer(&cp, &beta).unwrap();
        let t = build_t_nonlinear(&sys, &cp, &beta).unwrap();
        let samples = SampleSet::uniform(sys.domain(), 50, 3).unwrap();
        for x in samples.points() {
            assert_eq!(t.eval(x).unwrap()[0], 0.0);
            assert_eq!(residual_51(&sys, &cp, &beta, x).unwrap(), 0.0);
        }
        let rep = verify_design_conditions(&sys, &obs, &t, &samples).unwrap();
        assert_eq!((rep.max_res_42, rep.max_res_43), (0.0, 0.0));

        let mut wrong = obs.clone();
        wrong.d[0] = 0.9;
        let rep = verify_design_conditions(&sys, &wrong, &t, &samples).unwrap();
        assert!(rep.max_res_43 > 0.0);
        assert!(!rep.certified);
    }

    #[test]
    fn quadratic_functional_cannot_be_fitted() {
        let sys = quadratic_plant();
        let cp = CharPoly::from_coefficients(vec![-0.3]).unwrap();
        let train = SampleSet::uniform(sys.domain(), 100, 1).unwrap();
        let validate = SampleSet::uniform(sys.domain(), 100, 2).unwrap();
        let fit = fit_beta(&sys, &cp, &train, &validate).unwrap();
        assert!(!fit.candidate);
        assert!(fit.validation_residual > FIT_VALIDATION_TOL * fit.scale);
        assert_eq!(fit.label, DOMAIN_LABEL);
    }

    #[test]
    fn fit_needs_enough_points() {
        let sys = quadratic_plant();
        let cp = CharPoly::from_coefficients(vec![-0.3]).unwrap();
        let one = SampleSet::uniform(sys.domain(), 1, 1).unwrap();
        assert!(matches!(
            fit_beta(&sys, &cp, &one, &one),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn overflow_reports_the_state() {
        let sys = NonlinearSystem::new(
            1,
            1,
            |x| x.map(|v| (v * 1000.0).exp()),
            |x| x.clone(),
            |x| x[0],
            DomainBox::new(vec![0.0], vec![1.0]).unwrap(),
        )
        .unwrap();
        let cp = CharPoly::from_coefficients(vec![0.0, 0.0]).unwrap();
        let beta = BetaCoefficients::from_rows(&[&[0.0], &[0.0], &[0.0]]).unwrap();
        let err = residual_51(&sys, &cp, &beta, &DVector::from_vec(vec![0.9])).unwrap_err();
        assert!(matches!(err, Error::EvaluationOverflow { ref state, .. } if state == &vec![0.9]));
    }

    #[test]
    fn component_matches_eval() {
        let sys = quadratic_plant();
        let cp = CharPoly::from_coefficients(vec![-0.5, 0.06]).unwrap();
        let beta = BetaCoefficients::from_rows(&[&[0.2], &[-0.1], &[0.4]]).unwrap();
        let t = build_t_nonlinear(&sys, &cp, &beta).unwrap();
        let x = DVector::from_vec(vec![1.3]);
        let all = t.eval(&x).unwrap();
        assert_eq!(all[0], t.component(1, &x).unwrap());
        assert_eq!(all[1], t.component(2, &x).unwrap());
        // bottom row: -β0 H + q
        assert!((all[1] - (-0.2 * 1.3 + 1.69)).abs() < 1e-15);
        assert!(t.component(3, &x).is_err());
    }
}

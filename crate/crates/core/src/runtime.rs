//! Plant and functional observer in series, and the error law
//! `ẑ(k) - z(k) = C A^k (ξ(0) - T(x(0)))`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{all_finite, vec_max_abs};
use crate::linear_design::ObserverRealization;
use crate::model::SystemModel;
use crate::nonlinear_design::Transformation;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    pub true_z: Vec<f64>,
    pub xi_hat: Vec<DVector<f64>>,
    pub z_hat: Vec<f64>,
    /// Requested horizon `N`; the lists hold `N + 1` entries unless the run
    /// was cut short.
    pub horizon: usize,
    /// First step at which a non-finite value appeared.
    pub failed_at: Option<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.failed_at.is_none()
    }

    /// `ẑ(k) - z(k)`.
    pub fn estimation_error(&self) -> Vec<f64> {
        self.z_hat
            .iter()
            .zip(&self.true_z)
            .map(|(a, b)| a - b)
            .collect()
    }
}

pub fn simulate(
    sys: &dyn SystemModel,
    obs: &ObserverRealization,
    x0: &DVector<f64>,
    xi0: &DVector<f64>,
    horizon: usize,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::Dimension("horizon must be at least 1".into()));
    }
    if x0.len() != sys.state_dim()
        || xi0.len() != obs.order()
        || obs.output_dim() != sys.output_dim()
    {
        return Err(Error::Dimension(format!(
            "x0 has {} entries (n = {}), xi0 has {} (v = {}), observer takes {} outputs (p = {})",
            x0.len(),
            sys.state_dim(),
            xi0.len(),
            obs.order(),
            obs.output_dim(),
            sys.output_dim()
        )));
    }
    if !all_finite(x0) || !all_finite(xi0) {
        return Err(Error::Format("initial state must be finite".into()));
    }
    let mut traj = Trajectory {
        states: Vec::with_capacity(horizon + 1),
        outputs: Vec::with_capacity(horizon + 1),
        true_z: Vec::with_capacity(horizon + 1),
        xi_hat: Vec::with_capacity(horizon + 1),
        z_hat: Vec::with_capacity(horizon + 1),
        horizon,
        failed_at: None,
    };
    let mut x = x0.clone();
    let mut xi = xi0.clone();
    for k in 0..=horizon {
        let y = sys.output(&x);
        let z = sys.functional(&x);
        let z_hat = (&obs.c * &xi)[0] + (&obs.d * &y)[0];
        if !(all_finite(&x)
            && all_finite(&y)
            && all_finite(&xi)
            && z.is_finite()
            && z_hat.is_finite())
        {
            traj.failed_at = Some(k);
            break;
        }
        if k < horizon {
            let next_xi = &obs.a * &xi + &obs.b * &y;
            let next_x = sys.step(&x);
            traj.push(x, y, z, xi, z_hat);
            x = next_x;
            xi = next_xi;
        } else {
            traj.push(x, y, z, xi, z_hat);
            break;
        }
    }
    Ok(traj)
}

impl Trajectory {
    fn push(&mut self, x: DVector<f64>, y: DVector<f64>, z: f64, xi: DVector<f64>, z_hat: f64) {
        self.states.push(x);
        self.outputs.push(y);
        self.true_z.push(z);
        self.xi_hat.push(xi);
        self.z_hat.push(z_hat);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorAnalysis {
    pub observed_err: Vec<f64>,
    pub analytic_err: Vec<f64>,
    pub max_dev: f64,
}

/// Observed error against `C A^k e0`, with `A^k e0` advanced one step at a
/// time.
pub fn error_analysis(
    traj: &Trajectory,
    t: &dyn Transformation,
    obs: &ObserverRealization,
) -> Result<ErrorAnalysis> {
    if traj.is_empty() {
        return Err(Error::Dimension("empty trajectory".into()));
    }
    let observed_err = traj.estimation_error();
    let mut e = &traj.xi_hat[0] - t.eval(&traj.states[0])?;
    let mut analytic_err = Vec::with_capacity(observed_err.len());
    for _ in 0..observed_err.len() {
        analytic_err.push((&obs.c * &e)[0]);
        e = &obs.a * e;
    }
    let max_dev = observed_err
        .iter()
        .zip(&analytic_err)
        .fold(0.0_f64, |m, (o, a)| m.max((o - a).abs()));
    Ok(ErrorAnalysis {
        observed_err,
        analytic_err,
        max_dev,
    })
}

/// `max_k ‖ξ(k) - T(x(k))‖∞ / max(1, ‖T(x(k))‖∞)`.
pub fn manifold_deviation(traj: &Trajectory, t: &dyn Transformation) -> Result<f64> {
    traj.states
        .iter()
        .zip(&traj.xi_hat)
        .try_fold(0.0_f64, |m, (x, xi)| {
            let tx = t.eval(x)?;
            Ok(m.max(vec_max_abs(&(xi - &tx)) / vec_max_abs(&tx).max(1.0)))
        })
}

//! Non-isothermal CSTR scenario: N-methyl pyridine oxidation with hydrogen
//! peroxide, discretized with forward Euler.
//!
//! State `x = (C_A, C_B, θ, θ_j)`, outputs `y = (θ, θ_j)`, target
//! `z = C_A + C_B`. The observer is designed on the deviation model around
//! a steady state; estimates are reported in absolute units.

use std::collections::BTreeMap;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::io::{DomainBoxSpec, NonlinearSpec, SystemSpecFile};
use crate::linear_design::{realize_observer, BetaCoefficients, ObserverRealization};
use crate::model::{DomainBox, NonlinearSystem};
use crate::nonlinear_design::{build_t_nonlinear, Transformation};
use crate::runtime::{error_analysis, simulate, ErrorAnalysis, Trajectory};
use crate::spectrum::CharPoly;

/// Which heat capacity scales the jacket exchange term in the reactor
/// energy balance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JacketCoupling {
    /// `U S_A / (ρ c_p V)`: reactor-side holdup. The closed-form β and the
    /// observer coefficients are derived for this form.
    #[default]
    ReactorHoldup,
    /// `U S_A / (ρ_j c_pj V_j)` in both balances.
    JacketHoldup,
}

/// Model parameters as raw numbers (no unit conversion), except the
/// reaction enthalpy which is in J/mol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CstrParams {
    pub c_a_in: f64,
    pub c_b_in: f64,
    pub theta_in: f64,
    pub theta_j_in: f64,
    /// Sampling period δt.
    pub dt: f64,
    pub flow: f64,
    pub jacket_flow: f64,
    pub volume: f64,
    pub jacket_volume: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub e1: f64,
    pub e2: f64,
    pub e3: f64,
    /// ΔH_R in J/mol (negative: exothermic).
    pub delta_h: f64,
    pub rho: f64,
    pub rho_j: f64,
    pub cp: f64,
    pub cp_j: f64,
    pub u: f64,
    pub area: f64,
    pub z: f64,
    pub coupling: JacketCoupling,
}

impl Default for CstrParams {
    fn default() -> Self {
        Self {
            c_a_in: 2.0,
            c_b_in: 1.5,
            theta_in: 373.0,
            theta_j_in: 300.0,
            dt: 0.5,
            flow: 0.1,
            jacket_flow: 1.0,
            volume: 0.5,
            jacket_volume: 3e-2,
            a1: 8.08_f64.exp(),
            a2: 28.12_f64.exp(),
            a3: 25.12_f64.exp(),
            e1: 3952.0,
            e2: 7927.0,
            e3: 12989.0,
            delta_h: -160_000.0,
            rho: 1200.0,
            rho_j: 1000.0,
            cp: 3.4,
            cp_j: 3.0,
            u: 0.942,
            area: 1.0,
            z: 0.0021,
            coupling: JacketCoupling::ReactorHoldup,
        }
    }
}

impl CstrParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("C_A,in", self.c_a_in),
            ("C_B,in", self.c_b_in),
            ("theta_in", self.theta_in),
            ("theta_j,in", self.theta_j_in),
            ("F", self.flow),
            ("F_j", self.jacket_flow),
            ("V", self.volume),
            ("V_j", self.jacket_volume),
            ("A1", self.a1),
            ("A2", self.a2),
            ("A3", self.a3),
            ("E1", self.e1),
            ("E2", self.e2),
            ("E3", self.e3),
            ("rho", self.rho),
            ("rho_j", self.rho_j),
            ("c_p", self.cp),
            ("c_pj", self.cp_j),
            ("U", self.u),
            ("S_A", self.area),
            ("Z", self.z),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Domain(format!(
                    "{name} must be positive, got {value}"
                )));
            }
        }
        if !(self.dt.is_finite() && self.dt >= 0.0) {
            return Err(Error::Domain(format!(
                "dt must be non-negative, got {}",
                self.dt
            )));
        }
        if !(self.delta_h.is_finite() && self.delta_h < 0.0) {
            return Err(Error::Domain(format!(
                "reaction must be exothermic (delta_h < 0), got {}",
                self.delta_h
            )));
        }
        Ok(())
    }

    pub fn dilution_rate(&self) -> f64 {
        self.flow / self.volume
    }

    pub fn jacket_dilution_rate(&self) -> f64 {
        self.jacket_flow / self.jacket_volume
    }

    /// Exchange rate constant in the reactor energy balance.
    pub fn reactor_exchange(&self) -> f64 {
        match self.coupling {
            JacketCoupling::ReactorHoldup => {
                self.u * self.area / (self.rho * self.cp * self.volume)
            }
            JacketCoupling::JacketHoldup => self.jacket_exchange(),
        }
    }

    /// Exchange rate constant in the jacket energy balance.
    pub fn jacket_exchange(&self) -> f64 {
        self.u * self.area / (self.rho_j * self.cp_j * self.jacket_volume)
    }

    /// Adiabatic temperature rise per unit of reaction, `-ΔH_R / (ρ c_p)`.
    pub fn heat_gain(&self) -> f64 {
        -self.delta_h / (self.rho * self.cp)
    }

    /// `2 ρ c_p / (-ΔH_R)`.
    pub fn temperature_weight(&self) -> f64 {
        2.0 * self.rho * self.cp / (-self.delta_h)
    }

    /// Upper bound `2V/F` on δt keeping `|α1| < 1`.
    pub fn sampling_bound(&self) -> f64 {
        2.0 * self.volume / self.flow
    }

    /// Factor applied to a jacket-temperature deviation by one Euler step
    /// with the reactor temperature held fixed.
    pub fn jacket_step_factor(&self) -> f64 {
        1.0 - self.dt * (self.jacket_dilution_rate() + self.jacket_exchange())
    }

    /// Human-readable warnings about the discretization.
    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        let factor = self.jacket_step_factor();
        if factor.abs() >= 1.0 {
            out.push(format!(
                "jacket Euler step is unstable: deviations scale by {factor:.6} per step (needs dt < {:.6})",
                2.0 / (self.jacket_dilution_rate() + self.jacket_exchange())
            ));
        }
        out
    }
}

/// Steady-state values used for the deviation variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CstrReference {
    pub c_a: f64,
    pub c_b: f64,
    pub theta: f64,
    pub theta_j: f64,
}

impl CstrReference {
    /// The reference state as published with the case study.
    pub fn published() -> Self {
        Self {
            c_a: 0.6684,
            c_b: 0.1684,
            theta: 410.2332,
            theta_j: 302.03384,
        }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.c_a, self.c_b, self.theta, self.theta_j])
    }

    /// `C_A + C_B` at the reference.
    pub fn total_concentration(&self) -> f64 {
        self.c_a + self.c_b
    }

    /// Fixed point of [`cstr_step`] nearest to the published reference
    /// temperature.
    ///
    /// The concentration balances give `C_A - C_B = C_A,in - C_B,in`; for a
    /// given θ the remaining concentration is found by bisection (the rate
    /// is increasing in it), the jacket balance is solved in closed form,
    /// and the reactor energy balance is then a scalar equation in θ.
    pub fn steady_state(params: &CstrParams) -> Result<Self> {
        params.validate()?;
        let f = params.dilution_rate();
        let aj = params.jacket_dilution_rate();
        let kj = params.jacket_exchange();
        let kr = params.reactor_exchange();
        let diff = params.c_a_in - params.c_b_in;

        let c_a_of = |theta: f64| -> Result<f64> {
            let (mut lo, mut hi) = (diff.max(0.0), params.c_a_in);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if reaction_rate(mid, mid - diff, theta, params)? > f * (params.c_a_in - mid) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            Ok(0.5 * (lo + hi))
        };
        let theta_j_of = |theta: f64| (aj * params.theta_j_in + kj * theta) / (aj + kj);
        let balance = |theta: f64| -> Result<f64> {
            let c_a = c_a_of(theta)?;
            let r = reaction_rate(c_a, c_a - diff, theta, params)?;
            Ok(params.heat_gain() * r + f * (params.theta_in - theta)
                - kr * (theta - theta_j_of(theta)))
        };

        let (lo, hi, step) = (150.0, 1500.0, 0.25);
        let mut roots = Vec::new();
        let mut prev = (lo, balance(lo)?);
        let mut t = lo + step;
        while t <= hi {
            let g = balance(t)?;
            if prev.1 == 0.0 || prev.1.signum() != g.signum() {
                let (mut a, mut b, mut ga) = (prev.0, t, prev.1);
                for _ in 0..200 {
                    let m = 0.5 * (a + b);
                    let gm = balance(m)?;
                    if gm == 0.0 {
                        a = m;
                        b = m;
                        break;
                    }
                    if gm.signum() == ga.signum() {
                        a = m;
                        ga = gm;
                    } else {
                        b = m;
                    }
                }
                roots.push(0.5 * (a + b));
            }
            prev = (t, g);
            t += step;
        }
        let target = Self::published().theta;
        let theta = roots
            .into_iter()
            .min_by(|a, b| (a - target).abs().total_cmp(&(b - target).abs()))
            .ok_or_else(|| {
                Error::Domain(
                    "no steady state found for reactor temperature in [150, 1500] K".into(),
                )
            })?;
        let c_a = c_a_of(theta)?;
        Ok(Self {
            c_a,
            c_b: c_a - diff,
            theta,
            theta_j: theta_j_of(theta),
        })
    }
}

/// `F(ref) - ref` for the given reference, in absolute variables.
pub fn fixed_point_residual(
    params: &CstrParams,
    reference: &CstrReference,
) -> Result<DVector<f64>> {
    let x = reference.to_vector();
    Ok(cstr_step(&x, params)? - x)
}

/// Rate law: a saturating term in `C_B` plus a bimolecular term.
pub fn reaction_rate(c_a: f64, c_b: f64, theta: f64, params: &CstrParams) -> Result<f64> {
    if theta.is_nan() || theta <= 0.0 {
        return Err(Error::Domain(format!(
            "temperature must be positive, got {theta}"
        )));
    }
    let k1 = params.a1 * (-params.e1 / theta).exp();
    let k2 = params.a2 * (-params.e2 / theta).exp();
    let k3 = params.a3 * (-params.e3 / theta).exp();
    Ok(k1 * k2 * c_a * c_b * params.z / (1.0 + k2 * c_b) + k3 * c_a * c_b)
}

/// One Euler step of the four balances in absolute variables.
pub fn cstr_step(x: &DVector<f64>, params: &CstrParams) -> Result<DVector<f64>> {
    if x.len() != 4 {
        return Err(Error::Dimension(format!(
            "CSTR state has 4 entries, got {}",
            x.len()
        )));
    }
    let (c_a, c_b, theta, theta_j) = (x[0], x[1], x[2], x[3]);
    if !(theta > 0.0 && theta_j > 0.0) {
        return Err(Error::Domain(format!(
            "temperatures must be positive, got theta = {theta}, theta_j = {theta_j}"
        )));
    }
    let r = reaction_rate(c_a, c_b, theta, params)?;
    let f = params.dilution_rate();
    let dt = params.dt;
    let next = DVector::from_vec(vec![
        c_a + dt * (f * (params.c_a_in - c_a) - r),
        c_b + dt * (f * (params.c_b_in - c_b) - r),
        theta
            + dt * (params.heat_gain() * r)
            + dt * (f * (params.theta_in - theta) - params.reactor_exchange() * (theta - theta_j)),
        theta_j
            + dt * (params.jacket_dilution_rate() * (params.theta_j_in - theta_j)
                + params.jacket_exchange() * (theta - theta_j)),
    ]);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::EvaluationOverflow {
            state: x.iter().copied().collect(),
            what: "CSTR step".into(),
        });
    }
    Ok(next)
}

/// Half-widths of the verification box: ±0.5 mol/L and ±20 K.
pub const DEVIATION_HALF_WIDTHS: [f64; 4] = [0.5, 0.5, 20.0, 20.0];

/// Deviation model `x' = x - ref` with `y' = (θ', θ_j')`, `z' = C_A' + C_B'`.
/// Evaluation failures surface as NaN entries.
pub fn deviation_system(params: &CstrParams, reference: &CstrReference) -> Result<NonlinearSystem> {
    params.validate()?;
    let p = *params;
    let r = reference.to_vector();
    let domain = DomainBox::around(&[0.0; 4], &DEVIATION_HALF_WIDTHS)?;
    NonlinearSystem::new(
        4,
        2,
        move |x| match cstr_step(&(x + &r), &p) {
            Ok(next) => next - &r,
            Err(_) => DVector::from_element(4, f64::NAN),
        },
        |x| DVector::from_vec(vec![x[2], x[3]]),
        |x| x[0] + x[1],
        domain,
    )
}

/// The closed-form order-1 design.
#[derive(Debug, Clone, PartialEq)]
pub struct CstrDesign {
    pub beta0: [f64; 2],
    pub beta1: [f64; 2],
    pub alpha1: f64,
    pub poly: CharPoly,
    pub beta: BetaCoefficients,
    pub observer: ObserverRealization,
}

pub fn analytic_design(params: &CstrParams) -> Result<CstrDesign> {
    params.validate()?;
    let bound = params.sampling_bound();
    if params.dt >= bound {
        return Err(Error::StabilityBound {
            dt: params.dt,
            bound,
        });
    }
    let dt = params.dt;
    let w = params.temperature_weight();
    let us = params.u * params.area;
    let reactor_k = us / (params.rho * params.cp * params.volume);
    let jacket_k = params.jacket_exchange();
    let beta0 = [-w, 1.0];
    let beta1 = [
        w * (1.0 - params.flow * dt / params.volume - reactor_k * dt) - jacket_k * dt,
        params.jacket_flow * dt / params.jacket_volume
            + jacket_k * dt
            + 2.0 * us * dt / (-params.delta_h * params.volume)
            - 1.0,
    ];
    let alpha1 = dt * params.flow / params.volume - 1.0;
    let poly = CharPoly::from_coefficients(vec![alpha1])?;
    let beta = BetaCoefficients::from_rows(&[&beta0, &beta1])?;
    let observer = realize_observer(&poly, &beta)?;
    Ok(CstrDesign {
        beta0,
        beta1,
        alpha1,
        poly,
        beta,
        observer,
    })
}

/// Observer coefficients written out directly:
/// `ξ(k+1) = a ξ + b1 y1' + b2 y2'`, `ẑ = ξ + d1 y1' + d2 y2'`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplicitObserver {
    pub a: f64,
    pub b1: f64,
    pub b2: f64,
    pub d1: f64,
    pub d2: f64,
}

pub fn explicit_observer(params: &CstrParams) -> ExplicitObserver {
    let dt = params.dt;
    let us = params.u * params.area;
    let jacket = us / (params.rho_j * params.cp_j * params.jacket_volume);
    let release = 2.0 * us / (-params.delta_h * params.volume);
    ExplicitObserver {
        a: -(dt * params.flow / params.volume - 1.0),
        b1: -dt * (release + jacket),
        b2: dt
            * (params.jacket_flow / params.jacket_volume - params.flow / params.volume
                + jacket
                + release),
        d1: -2.0 * params.rho * params.cp / (-params.delta_h),
        d2: 1.0,
    }
}

/// Initial reactor state: empty of reactants at 300 K.
pub const INITIAL_STATE: [f64; 4] = [0.0, 0.0, 300.0, 300.0];
pub const DEFAULT_HORIZON: usize = 600;

#[derive(Debug, Clone)]
pub struct CaseStudy {
    pub params: CstrParams,
    pub reference: CstrReference,
    pub design: CstrDesign,
    /// Trajectory in deviation variables.
    pub trajectory: Trajectory,
    pub analysis: ErrorAnalysis,
    /// Added to deviation `z` and `ẑ` to report absolute totals.
    pub z_offset: f64,
    pub diagnostics: Vec<String>,
}

impl CaseStudy {
    pub fn z_abs(&self) -> Vec<f64> {
        self.trajectory
            .true_z
            .iter()
            .map(|z| z + self.z_offset)
            .collect()
    }

    pub fn z_hat_abs(&self) -> Vec<f64> {
        self.trajectory
            .z_hat
            .iter()
            .map(|z| z + self.z_offset)
            .collect()
    }

    /// Absolute states `x(k) = x'(k) + ref`.
    pub fn states_abs(&self) -> Vec<DVector<f64>> {
        let r = self.reference.to_vector();
        self.trajectory.states.iter().map(|x| x + &r).collect()
    }
}

/// Runs the scenario with the default parameters.
pub fn run_case_study(init_error: f64, horizon: usize) -> Result<CaseStudy> {
    run_case_study_with(&CstrParams::default(), init_error, horizon)
}

/// Plant from [`INITIAL_STATE`], observer started at
/// `ξ(0) = T(x'(0)) + init_error`.
pub fn run_case_study_with(
    params: &CstrParams,
    init_error: f64,
    horizon: usize,
) -> Result<CaseStudy> {
    let reference = CstrReference::steady_state(params)?;
    let design = analytic_design(params)?;
    let sys = deviation_system(params, &reference)?;
    let t = build_t_nonlinear(&sys, &design.poly, &design.beta)?;
    let x0 = DVector::from_column_slice(&INITIAL_STATE) - reference.to_vector();
    let xi0 = t.eval(&x0)?.add_scalar(init_error);
    let trajectory = simulate(&sys, &design.observer, &x0, &xi0, horizon)?;
    let analysis = error_analysis(&trajectory, &t, &design.observer)?;

    let mut diagnostics = params.diagnostics();
    let published = CstrReference::published();
    let fp = fixed_point_residual(params, &published)?;
    diagnostics.push(format!(
        "published reference is not a fixed point: F(ref) - ref = [{:.6e}, {:.6e}, {:.6e}, {:.6e}]",
        fp[0], fp[1], fp[2], fp[3]
    ));
    diagnostics.push(format!(
        "deviation variables use the solved steady state C_A = {:.10}, C_B = {:.10}, theta = {:.10}, theta_j = {:.10}",
        reference.c_a, reference.c_b, reference.theta, reference.theta_j
    ));
    if let Some(k) = trajectory.failed_at {
        diagnostics.push(format!(
            "simulation stopped at step {k}: non-finite plant or observer value"
        ));
    }
    Ok(CaseStudy {
        params: *params,
        reference,
        design,
        trajectory,
        analysis,
        z_offset: reference.total_concentration(),
        diagnostics,
    })
}

/// Parameter table keyed by the names used in [`deviation_expressions`].
pub fn parameter_table(params: &CstrParams, reference: &CstrReference) -> BTreeMap<String, f64> {
    let reactor_heat_capacity = match params.coupling {
        JacketCoupling::ReactorHoldup => params.rho * params.cp * params.volume,
        JacketCoupling::JacketHoldup => params.rho_j * params.cp_j * params.jacket_volume,
    };
    [
        ("CAin", params.c_a_in),
        ("CBin", params.c_b_in),
        ("thin", params.theta_in),
        ("thjin", params.theta_j_in),
        ("dt", params.dt),
        ("Fl", params.flow),
        ("Fj", params.jacket_flow),
        ("V", params.volume),
        ("Vj", params.jacket_volume),
        ("A1", params.a1),
        ("A2", params.a2),
        ("A3", params.a3),
        ("E1", params.e1),
        ("E2", params.e2),
        ("E3", params.e3),
        ("dH", params.delta_h),
        ("rho", params.rho),
        ("rhoj", params.rho_j),
        ("cp", params.cp),
        ("cpj", params.cp_j),
        ("U", params.u),
        ("SA", params.area),
        ("Z", params.z),
        ("Cr", reactor_heat_capacity),
        ("CAr", reference.c_a),
        ("CBr", reference.c_b),
        ("thr", reference.theta),
        ("thjr", reference.theta_j),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Rate law over absolute variables named `ca`, `cb`, `th`, written with the
/// parameter names of [`parameter_table`].
pub fn rate_expression(ca: &str, cb: &str, th: &str) -> String {
    format!(
        "A1*exp(-E1/{th})*A2*exp(-E2/{th})*{ca}*{cb}*Z/(1 + A2*exp(-E2/{th})*{cb}) + A3*exp(-E3/{th})*{ca}*{cb}"
    )
}

/// Deviation model as text: `(F components, H components, q)` over
/// `x1..x4`. `Cr` is the heat capacity scaling the reactor exchange term.
pub fn deviation_expressions() -> (Vec<String>, Vec<String>, String) {
    let (ca, cb, th, thj) = ("(x1 + CAr)", "(x2 + CBr)", "(x3 + thr)", "(x4 + thjr)");
    let r = format!("({})", rate_expression(ca, cb, th));
    let f = vec![
        format!("{ca} + dt*(Fl/V*(CAin - {ca}) - {r}) - CAr"),
        format!("{cb} + dt*(Fl/V*(CBin - {cb}) - {r}) - CBr"),
        format!(
            "{th} + dt*(-dH/(rho*cp)*{r}) + dt*(Fl/V*(thin - {th}) - U*SA/Cr*({th} - {thj})) - thr"
        ),
        format!("{thj} + dt*(Fj/Vj*(thjin - {thj}) + U*SA/(rhoj*cpj*Vj)*({th} - {thj})) - thjr"),
    ];
    let h = vec!["x3".to_string(), "x4".to_string()];
    (f, h, "x1 + x2".to_string())
}

/// The deviation model as a nonlinear system spec file.
pub fn spec_file(params: &CstrParams) -> Result<SystemSpecFile> {
    params.validate()?;
    let reference = CstrReference::steady_state(params)?;
    let (f, h, q) = deviation_expressions();
    let lower = DEVIATION_HALF_WIDTHS.iter().map(|w| -w).collect();
    Ok(SystemSpecFile::Nonlinear(NonlinearSpec {
        name: Some("cstr-deviation".into()),
        n: 4,
        p: 2,
        f,
        h,
        q,
        params: parameter_table(params, &reference),
        domain_box: DomainBoxSpec {
            lower,
            upper: DEVIATION_HALF_WIDTHS.to_vec(),
        },
    }))
}

//! File formats: system specs and design reports as JSON, trajectories as
//! CSV.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, RowDVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{self, Expr};
use crate::linear_design::{
    verify_luenberger, BetaCoefficients, LinearDesign, LinearTransformation, ObserverRealization,
};
use crate::model::{rows_to_matrix, DomainBox, LinearSystem, NonlinearSystem};
use crate::nonlinear_design::{
    check_condition, ConditionReport, DesignConditionReport, FitReport, SampleSet, DOMAIN_LABEL,
};
use crate::runtime::{ErrorAnalysis, Trajectory};
use crate::spectrum::CharPoly;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SystemSpecFile {
    Linear(LinearSpec),
    Nonlinear(NonlinearSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(rename = "F")]
    pub f: Vec<Vec<f64>>,
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub n: usize,
    pub p: usize,
    #[serde(rename = "F")]
    pub f: Vec<String>,
    #[serde(rename = "H")]
    pub h: Vec<String>,
    pub q: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub domain_box: DomainBoxSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBoxSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Nonlinear plant declared by expressions, kept alongside its callable
/// form.
#[derive(Debug, Clone)]
pub struct ExprSystem {
    pub f: Vec<Expr>,
    pub h: Vec<Expr>,
    pub q: Expr,
    pub params: BTreeMap<String, f64>,
    pub system: NonlinearSystem,
}

#[derive(Debug, Clone)]
pub enum LoadedSystem {
    Linear(LinearSystem),
    Nonlinear(ExprSystem),
}

impl SystemSpecFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("system spec: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("system spec serializes")
    }

    pub fn name(&self) -> Option<&str> {
        match self {
            Self::Linear(s) => s.name.as_deref(),
            Self::Nonlinear(s) => s.name.as_deref(),
        }
    }

    pub fn from_linear(sys: &LinearSystem, name: Option<String>) -> Self {
        Self::Linear(LinearSpec {
            name,
            f: matrix_rows(sys.f()),
            h: matrix_rows(sys.h()),
            q: sys.q().iter().copied().collect(),
        })
    }

    /// Validates dimensions and builds the system.
    pub fn load(&self) -> Result<LoadedSystem> {
        match self {
            Self::Linear(s) => {
                let f: Vec<&[f64]> = s.f.iter().map(Vec::as_slice).collect();
                let h: Vec<&[f64]> = s.h.iter().map(Vec::as_slice).collect();
                let sys = LinearSystem::new(
                    rows_to_matrix(&f)?,
                    rows_to_matrix(&h)?,
                    RowDVector::from_row_slice(&s.q),
                )?;
                Ok(LoadedSystem::Linear(sys))
            }
            Self::Nonlinear(s) => load_nonlinear(s).map(LoadedSystem::Nonlinear),
        }
    }
}

fn load_nonlinear(s: &NonlinearSpec) -> Result<ExprSystem> {
    if s.f.len() != s.n || s.h.len() != s.p {
        return Err(Error::Dimension(format!(
            "nonlinear spec declares n = {}, p = {} but has {} F and {} H expressions",
            s.n,
            s.p,
            s.f.len(),
            s.h.len()
        )));
    }
    if s.p == 0 || s.p > s.n {
        return Err(Error::Dimension(format!(
            "need 1 <= p <= n, got p = {}, n = {}",
            s.p, s.n
        )));
    }
    let names: BTreeSet<String> = s.params.keys().cloned().collect();
    let parse_all = |list: &[String], what: &str| -> Result<Vec<Expr>> {
        list.iter()
            .enumerate()
            .map(|(i, text)| {
                expr::parse(text, s.n, &names)
                    .map_err(|e| Error::Format(format!("{what}[{}]: {e}", i + 1)))
            })
            .collect()
    };
    let f = parse_all(&s.f, "F")?;
    let h = parse_all(&s.h, "H")?;
    let q = expr::parse(&s.q, s.n, &names).map_err(|e| Error::Format(format!("q: {e}")))?;
    let domain = DomainBox::new(s.domain_box.lower.clone(), s.domain_box.upper.clone())?;
    let system = expression_system(s.n, s.p, &f, &h, &q, &s.params, domain)?;
    system.check_at_box_points()?;
    Ok(ExprSystem {
        f,
        h,
        q,
        params: s.params.clone(),
        system,
    })
}

fn expression_system(
    n: usize,
    p: usize,
    f: &[Expr],
    h: &[Expr],
    q: &Expr,
    params: &BTreeMap<String, f64>,
    domain: DomainBox,
) -> Result<NonlinearSystem> {
    let params = Arc::new(params.clone());
    let eval_list = |list: Vec<Expr>, params: Arc<BTreeMap<String, f64>>| {
        move |x: &DVector<f64>| {
            DVector::from_iterator(
                list.len(),
                list.iter()
                    .map(|e| e.eval(x.as_slice(), &params).unwrap_or(f64::NAN)),
            )
        }
    };
    let q = q.clone();
    let qp = Arc::clone(&params);
    NonlinearSystem::new(
        n,
        p,
        eval_list(f.to_vec(), Arc::clone(&params)),
        eval_list(h.to_vec(), Arc::clone(&params)),
        move |x| q.eval(x.as_slice(), &qp).unwrap_or(f64::NAN),
        domain,
    )
}

impl ExprSystem {
    /// Components of `T` written out by composing the expressions with `F`.
    pub fn transformation_expressions(
        &self,
        cp: &CharPoly,
        beta: &BetaCoefficients,
    ) -> Vec<String> {
        let v = cp.order();
        let n = self.f.len();
        let mut powers = vec![(0..n).map(Expr::Var).collect::<Vec<_>>()];
        for _ in 1..v {
            let prev = powers.last().expect("non-empty");
            powers.push(self.f.iter().map(|e| e.substitute(prev)).collect());
        }
        let mut rows = vec![String::new(); v];
        for k in 0..v {
            let mut terms = Vec::new();
            for i in 0..=k {
                let at = &powers[k - i];
                let a = cp.coeff(i);
                if a != 0.0 {
                    terms.push(format!("{a:?}*{}", self.q.substitute(at)));
                }
                for (j, hj) in self.h.iter().enumerate() {
                    let b = beta.row(i)[j];
                    if b != 0.0 {
                        terms.push(format!("{:?}*{}", -b, hj.substitute(at)));
                    }
                }
            }
            rows[v - 1 - k] = if terms.is_empty() {
                "0.0".into()
            } else {
                terms.join(" + ")
            };
        }
        rows
    }
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    rows_to_matrix(&refs).map_err(|e| Error::Format(format!("{what}: {e}")))
}

pub fn format_complex(z: &Complex64) -> String {
    if z.im == 0.0 {
        format!("{:?}", z.re)
    } else {
        format!(
            "{:?}{}{:?}i",
            z.re,
            if z.im < 0.0 { '-' } else { '+' },
            z.im.abs()
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportResiduals {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feasibility: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub res_dyn: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub res_out: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_res_42: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_res_43: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformationForm {
    Matrix(Vec<Vec<f64>>),
    Expressions(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleInfo {
    pub count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub order: usize,
    #[serde(default)]
    pub eigenvalues: Vec<String>,
    pub alpha: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<Vec<f64>>>,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
    #[serde(rename = "C", default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<f64>>,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    pub d: Option<Vec<f64>>,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub t: Option<TransformationForm>,
    pub residuals: ReportResiduals,
    pub feasible: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strict_span: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<SampleInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default)]
    pub diagnostics: Vec<String>,
    pub system: SystemSpecFile,
}

impl DesignReport {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("design report: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn linear_feasible(
        sys: &LinearSystem,
        d: &LinearDesign,
        strict_span: bool,
        name: Option<String>,
    ) -> Self {
        let mut diagnostics = Vec::new();
        diagnostics.extend(d.poly.stability_warning());
        if !d.residuals.certified {
            diagnostics.push("Luenberger conditions not certified at tolerance 1e-10".into());
        }
        Self {
            order: d.poly.order(),
            eigenvalues: d
                .poly
                .roots()
                .map(|r| r.iter().map(format_complex).collect())
                .unwrap_or_default(),
            alpha: d.poly.alpha().to_vec(),
            beta: Some(beta_rows(&d.beta)),
            a: Some(matrix_rows(&d.observer.a)),
            b: Some(matrix_rows(&d.observer.b)),
            c: Some(d.observer.c.iter().copied().collect()),
            d: Some(d.observer.d.iter().copied().collect()),
            t: Some(TransformationForm::Matrix(matrix_rows(&d.transformation.t))),
            residuals: ReportResiduals {
                feasibility: Some(d.feasibility_residual),
                res_dyn: Some(d.residuals.res_dyn),
                res_out: Some(d.residuals.res_out),
                ..Default::default()
            },
            feasible: d.residuals.certified,
            strict_span: Some(strict_span),
            samples: None,
            label: None,
            diagnostics,
            system: SystemSpecFile::from_linear(sys, name),
        }
    }

    pub fn linear_infeasible(
        sys: &LinearSystem,
        cp: &CharPoly,
        residual: f64,
        strict_span: bool,
        name: Option<String>,
    ) -> Self {
        Self {
            order: cp.order(),
            eigenvalues: cp.roots().map(|r| r.iter().map(format_complex).collect()).unwrap_or_default(),
            alpha: cp.alpha().to_vec(),
            beta: None,
            a: None,
            b: None,
            c: None,
            d: None,
            t: None,
            residuals: ReportResiduals {
                feasibility: Some(residual),
                ..Default::default()
            },
            feasible: false,
            strict_span: Some(strict_span),
            samples: None,
            label: None,
            diagnostics: vec![format!(
                "target row is outside the span of the output rows (least-squares residual {residual:e})"
            )],
            system: SystemSpecFile::from_linear(sys, name),
        }
    }

    /// Report for a sampled nonlinear verification. `feasible` requires the
    /// condition to hold on the samples and, for fitted β, the validation
    /// check to pass.
    #[allow(clippy::too_many_arguments)]
    pub fn nonlinear(
        spec: &SystemSpecFile,
        es: &ExprSystem,
        cp: &CharPoly,
        beta: &BetaCoefficients,
        condition: &ConditionReport,
        design: Option<(&ObserverRealization, &DesignConditionReport)>,
        fit: Option<&FitReport>,
        samples: SampleInfo,
    ) -> Self {
        let mut diagnostics = Vec::new();
        diagnostics.extend(cp.stability_warning());
        let mut residuals = ReportResiduals {
            condition_max: Some(condition.max_residual),
            condition_scale: Some(condition.scale),
            ..Default::default()
        };
        let mut feasible = condition.satisfied;
        if let Some(fit) = fit {
            residuals.train = Some(fit.train_residual);
            residuals.validation = Some(fit.validation_residual);
            diagnostics.extend(fit.warnings());
            if !fit.candidate {
                diagnostics.push(format!(
                    "fitted beta fails validation: residual {:e} at scale {:e}",
                    fit.validation_residual, fit.scale
                ));
            }
            feasible &= fit.candidate;
        }
        if !condition.satisfied {
            diagnostics.push(format!(
                "identity violated on samples: max residual {:e} at scale {:e}",
                condition.max_residual, condition.scale
            ));
        }
        let (mut a, mut b, mut c, mut d, mut t) = (None, None, None, None, None);
        if let Some((obs, dc)) = design {
            residuals.max_res_42 = Some(dc.max_res_42);
            residuals.max_res_43 = Some(dc.max_res_43);
            a = Some(matrix_rows(&obs.a));
            b = Some(matrix_rows(&obs.b));
            c = Some(obs.c.iter().copied().collect());
            d = Some(obs.d.iter().copied().collect());
            t = Some(TransformationForm::Expressions(
                es.transformation_expressions(cp, beta),
            ));
        }
        Self {
            order: cp.order(),
            eigenvalues: cp
                .roots()
                .map(|r| r.iter().map(format_complex).collect())
                .unwrap_or_default(),
            alpha: cp.alpha().to_vec(),
            beta: Some(beta_rows(beta)),
            a,
            b,
            c,
            d,
            t,
            residuals,
            feasible,
            strict_span: None,
            samples: Some(samples),
            label: Some(DOMAIN_LABEL.to_string()),
            diagnostics,
            system: spec.clone(),
        }
    }

    pub fn poly(&self) -> Result<CharPoly> {
        CharPoly::from_coefficients(self.alpha.clone())
    }

    pub fn beta_coefficients(&self) -> Result<BetaCoefficients> {
        let rows = self
            .beta
            .as_ref()
            .ok_or_else(|| Error::Format("report has no beta".into()))?;
        BetaCoefficients::new(rows.iter().map(|r| RowDVector::from_row_slice(r)).collect())
    }

    pub fn observer(&self) -> Result<ObserverRealization> {
        let missing = |what: &str| Error::Format(format!("report has no {what} matrix"));
        let a = matrix_from_rows(self.a.as_ref().ok_or_else(|| missing("A"))?, "A")?;
        let b = matrix_from_rows(self.b.as_ref().ok_or_else(|| missing("B"))?, "B")?;
        let c = RowDVector::from_row_slice(self.c.as_ref().ok_or_else(|| missing("C"))?);
        let d = RowDVector::from_row_slice(self.d.as_ref().ok_or_else(|| missing("D"))?);
        ObserverRealization::new(a, b, c, d)
    }

    /// Recomputes the residuals from the stored matrices and system and
    /// checks they still support the `feasible` flag.
    pub fn revalidate(&self) -> Result<bool> {
        if !self.feasible {
            return Ok(true);
        }
        match self.system.load()? {
            LoadedSystem::Linear(sys) => {
                let Some(TransformationForm::Matrix(t)) = &self.t else {
                    return Err(Error::Format("linear report needs a matrix T".into()));
                };
                let t = LinearTransformation {
                    t: matrix_from_rows(t, "T")?,
                };
                Ok(verify_luenberger(&sys, &self.observer()?, &t)?.certified)
            }
            LoadedSystem::Nonlinear(es) => {
                let info = self
                    .samples
                    .ok_or_else(|| Error::Format("nonlinear report needs sample info".into()))?;
                let samples = SampleSet::uniform(es.system.domain(), info.count, info.seed)?;
                let rep = check_condition(
                    &es.system,
                    &self.poly()?,
                    &self.beta_coefficients()?,
                    &samples,
                )?;
                Ok(rep.satisfied)
            }
        }
    }
}

pub fn beta_rows(beta: &BetaCoefficients) -> Vec<Vec<f64>> {
    beta.rows()
        .iter()
        .map(|r| r.iter().copied().collect())
        .collect()
}

/// Constant shifts applied when writing a trajectory, e.g. to report
/// deviation variables in absolute units.
#[derive(Debug, Clone, Default)]
pub struct CsvOffsets {
    pub state: Option<DVector<f64>>,
    pub output: Option<DVector<f64>>,
    pub z: f64,
}

/// Columns `k, x_1..x_n, y_1..y_p, z, z_hat, err, analytic_err`.
pub fn write_trajectory_csv<W: Write>(
    out: W,
    traj: &Trajectory,
    analysis: &ErrorAnalysis,
    offsets: &CsvOffsets,
) -> Result<()> {
    let io_err = |e: csv::Error| Error::Format(format!("csv: {e}"));
    let mut w = csv::Writer::from_writer(out);
    let n = traj.states.first().map_or(0, |x| x.len());
    let p = traj.outputs.first().map_or(0, |y| y.len());
    let mut header = vec!["k".to_string()];
    header.extend((1..=n).map(|i| format!("x_{i}")));
    header.extend((1..=p).map(|i| format!("y_{i}")));
    header.extend(["z", "z_hat", "err", "analytic_err"].map(String::from));
    w.write_record(&header).map_err(io_err)?;
    for k in 0..traj.len() {
        let mut rec = vec![k.to_string()];
        let shifted = |v: &DVector<f64>, off: &Option<DVector<f64>>| match off {
            Some(o) => v + o,
            None => v.clone(),
        };
        rec.extend(
            shifted(&traj.states[k], &offsets.state)
                .iter()
                .map(|v| format!("{v:?}")),
        );
        rec.extend(
            shifted(&traj.outputs[k], &offsets.output)
                .iter()
                .map(|v| format!("{v:?}")),
        );
        rec.push(format!("{:?}", traj.true_z[k] + offsets.z));
        rec.push(format!("{:?}", traj.z_hat[k] + offsets.z));
        rec.push(format!("{:?}", analysis.observed_err[k]));
        rec.push(format!("{:?}", analysis.analytic_err[k]));
        w.write_record(&rec).map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::Format(format!("csv: {e}")))?;
    Ok(())
}

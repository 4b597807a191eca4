//! Eigenvalue sets, characteristic polynomials and the observer canonical form.

use nalgebra::{DMatrix, RowDVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

const PAIRING_TOL: f64 = 1e-12;

/// Monic polynomial `λ^v + α1 λ^(v-1) + … + αv`, stored as `(α1, …, αv)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CharPoly {
    alpha: Vec<f64>,
    roots: Option<Vec<Complex64>>,
}

impl CharPoly {
    pub fn from_coefficients(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::EmptyEigenvalues);
        }
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::Format("non-finite polynomial coefficient".into()));
        }
        Ok(Self { alpha, roots: None })
    }

    /// `(α1, …, αv)`.
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// `α_i` with the convention `α_0 = 1`.
    pub fn coeff(&self, i: usize) -> f64 {
        if i == 0 {
            1.0
        } else {
            self.alpha[i - 1]
        }
    }

    pub fn order(&self) -> usize {
        self.alpha.len()
    }

    /// Roots the polynomial was built from, if any.
    pub fn roots(&self) -> Option<&[Complex64]> {
        self.roots.as_deref()
    }

    /// Moduli of the roots; computed from the companion matrix when the
    /// polynomial was given by coefficients.
    pub fn spectral_radius(&self) -> f64 {
        match &self.roots {
            Some(r) => r.iter().map(|z| z.norm()).fold(0.0, f64::max),
            None => {
                let (a, _) = companion_realization(self);
                a.complex_eigenvalues()
                    .iter()
                    .map(|z| z.norm())
                    .fold(0.0, f64::max)
            }
        }
    }

    pub fn is_schur_stable(&self) -> bool {
        self.spectral_radius() < 1.0
    }

    /// Warning text for choices with some |λ| >= 1. Unstable spectra are
    /// allowed; the initialization error just will not decay.
    pub fn stability_warning(&self) -> Option<String> {
        let rho = self.spectral_radius();
        (rho >= 1.0).then(|| {
            format!("observer spectrum is not Schur-stable (max |lambda| = {rho}); initialization error will not decay")
        })
    }
}

/// Expands `∏(λ - r_i)` by incremental convolution.
pub fn poly_from_eigenvalues(roots: &[Complex64]) -> Result<CharPoly> {
    if roots.is_empty() {
        return Err(Error::EmptyEigenvalues);
    }
    check_conjugate_pairs(roots)?;
    // coefficients of the monic polynomial, highest power first
    let mut coeffs = vec![Complex64::new(1.0, 0.0)];
    for &r in roots {
        let mut next = coeffs.clone();
        next.push(Complex64::new(0.0, 0.0));
        for (i, c) in coeffs.iter().enumerate() {
            next[i + 1] -= r * c;
        }
        coeffs = next;
    }
    Ok(CharPoly {
        alpha: coeffs[1..].iter().map(|c| c.re).collect(),
        roots: Some(roots.to_vec()),
    })
}

fn check_conjugate_pairs(roots: &[Complex64]) -> Result<()> {
    let mut used = vec![false; roots.len()];
    for (i, r) in roots.iter().enumerate() {
        if !r.re.is_finite() || !r.im.is_finite() {
            return Err(Error::Format("non-finite eigenvalue".into()));
        }
        if r.im.abs() <= PAIRING_TOL || used[i] {
            continue;
        }
        used[i] = true;
        let partner = (0..roots.len()).find(|&k| {
            !used[k]
                && (roots[k].re - r.re).abs() <= PAIRING_TOL
                && (roots[k].im + r.im).abs() <= PAIRING_TOL
        });
        match partner {
            Some(k) => used[k] = true,
            None => return Err(Error::ConjugatePair { re: r.re, im: r.im }),
        }
    }
    Ok(())
}

/// Observer canonical form: ones on the subdiagonal, last column
/// `(-αv, …, -α1)^T`, and `C = [0 … 0 1]`.
pub fn companion_realization(cp: &CharPoly) -> (DMatrix<f64>, RowDVector<f64>) {
    let v = cp.order();
    let mut a = DMatrix::zeros(v, v);
    for i in 1..v {
        a[(i, i - 1)] = 1.0;
    }
    for r in 0..v {
        a[(r, v - 1)] = -cp.alpha[v - 1 - r];
    }
    let mut c = RowDVector::zeros(v);
    c[v - 1] = 1.0;
    (a, c)
}

/// Parses a comma-separated eigenvalue list; complex entries as `a+bi`,
/// `a-bi` or `bi`.
pub fn parse_eigenvalues(text: &str) -> Result<Vec<Complex64>> {
    let roots = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse_complex)
        .collect::<Result<Vec<_>>>()?;
    if roots.is_empty() {
        return Err(Error::EmptyEigenvalues);
    }
    Ok(roots)
}

fn parse_complex(s: &str) -> Result<Complex64> {
    let bad = || Error::Format(format!("cannot parse eigenvalue `{s}`"));
    let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let Some(body) = compact.strip_suffix(['i', 'j']) else {
        return compact
            .parse::<f64>()
            .map(|re| Complex64::new(re, 0.0))
            .map_err(|_| bad());
    };
    let bytes = body.as_bytes();
    // split at the last sign that is not leading and not an exponent sign
    let split = (1..bytes.len())
        .rev()
        .find(|&i| matches!(bytes[i], b'+' | b'-') && !matches!(bytes[i - 1], b'e' | b'E'));
    let (re, im) = match split {
        Some(i) => (&body[..i], &body[i..]),
        None => ("0", body),
    };
    let im = match im {
        "" | "+" => 1.0,
        "-" => -1.0,
        other => other.parse::<f64>().map_err(|_| bad())?,
    };
    Ok(Complex64::new(re.parse::<f64>().map_err(|_| bad())?, im))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn single_root() {
        let cp = poly_from_eigenvalues(&[c(0.9, 0.0)]).unwrap();
        assert_eq!(cp.alpha(), &[-0.9]);
    }

    #[test]
    fn real_pair() {
        let cp = poly_from_eigenvalues(&[c(0.5, 0.0), c(0.4, 0.0)]).unwrap();
        assert!((cp.alpha()[0] + 0.9).abs() < 1e-15);
        assert!((cp.alpha()[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn conjugate_pair() {
        let cp = poly_from_eigenvalues(&[c(0.3, 0.4), c(0.3, -0.4)]).unwrap();
        assert!((cp.alpha()[0] + 0.6).abs() < 1e-15);
        assert!((cp.alpha()[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn unpaired_complex_root() {
        assert_eq!(
            poly_from_eigenvalues(&[c(0.3, 0.4), c(0.3, 0.4)]),
            Err(Error::ConjugatePair { re: 0.3, im: 0.4 })
        );
        assert_eq!(poly_from_eigenvalues(&[]), Err(Error::EmptyEigenvalues));
    }

    #[test]
    fn companion_shapes() {
        let (a, cr) = companion_realization(&CharPoly::from_coefficients(vec![-0.9]).unwrap());
        assert_eq!(a, DMatrix::from_element(1, 1, 0.9));
        assert_eq!(cr, RowDVector::from_element(1, 1.0));

        let (a, cr) = companion_realization(&CharPoly::from_coefficients(vec![-0.9, 0.2]).unwrap());
        assert_eq!(a, DMatrix::from_row_slice(2, 2, &[0.0, -0.2, 1.0, 0.9]));
        assert_eq!(cr, RowDVector::from_row_slice(&[0.0, 1.0]));

        let (a, _) = companion_realization(&CharPoly::from_coefficients(vec![0.0]).unwrap());
        assert_eq!(a[(0, 0)], 0.0);
    }

    #[test]
    fn stability_flag() {
        assert!(poly_from_eigenvalues(&[c(0.9, 0.0)])
            .unwrap()
            .stability_warning()
            .is_none());
        let unstable = poly_from_eigenvalues(&[c(1.2, 0.0), c(0.1, 0.0)]).unwrap();
        assert!(!unstable.is_schur_stable());
        assert!(unstable.stability_warning().is_some());
        let by_coeffs = CharPoly::from_coefficients(vec![-1.5, 0.56]).unwrap(); // roots 0.7, 0.8
        assert!(by_coeffs.is_schur_stable());
    }

    #[test]
    fn parses_eigenvalue_lists() {
        let roots = parse_eigenvalues("0.5, 0.3+0.4i,0.3-0.4i, -2e-1, 1e-2-3.5e-1i, 0.2i").unwrap();
        assert_eq!(
            roots,
            vec![
                c(0.5, 0.0),
                c(0.3, 0.4),
                c(0.3, -0.4),
                c(-0.2, 0.0),
                c(0.01, -0.35),
                c(0.0, 0.2)
            ]
        );
        assert!(parse_eigenvalues("0.5,abc").is_err());
        assert!(parse_eigenvalues("").is_err());
    }
}

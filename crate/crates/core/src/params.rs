//! Operator exponents and the constants derived from them.

use crate::error::{invalid, Error, Result};
use serde::{Deserialize, Serialize};

/// Exponents of `r^{-(gamma-1)} (r^alpha |u'|^{beta-1} u')' = 1/f(u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl OperatorParams {
    /// Validates `gamma > alpha > beta >= 1`.
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let p = OperatorParams { alpha, beta, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let OperatorParams { alpha, beta, gamma } = *self;
        if !(alpha.is_finite() && beta.is_finite() && gamma.is_finite()) {
            return Err(invalid("alpha, beta and gamma must be finite"));
        }
        if beta < 1.0 {
            return Err(invalid(format!("require beta >= 1 (got beta = {beta})")));
        }
        if alpha <= beta {
            return Err(invalid(format!(
                "require alpha > beta (got alpha = {alpha}, beta = {beta})"
            )));
        }
        if gamma <= alpha {
            return Err(invalid(format!(
                "require gamma > alpha (got gamma = {gamma}, alpha = {alpha})"
            )));
        }
        Ok(())
    }

    /// Laplacian with weight `|x|^sigma` in dimension `n`: `(n-1, 1, n+sigma)`.
    pub fn laplace(n: u32, sigma: f64) -> Result<Self> {
        Self::new(n as f64 - 1.0, 1.0, n as f64 + sigma)
    }

    /// p-Laplacian with weight `|x|^sigma`: `(n-1, p-1, n+sigma)`.
    pub fn p_laplace(n: u32, p: f64, sigma: f64) -> Result<Self> {
        Self::new(n as f64 - 1.0, p - 1.0, n as f64 + sigma)
    }

    /// k-Hessian operator: `(n-k, k, n)`.
    pub fn k_hessian(n: u32, k: u32) -> Result<Self> {
        Self::new(n as f64 - k as f64, k as f64, n as f64)
    }

    /// Exponent of the singular solution, `1 + (gamma - alpha)/beta`.
    pub fn theta(&self) -> f64 {
        1.0 + (self.gamma - self.alpha) / self.beta
    }

    /// `beta*gamma + alpha - beta`.
    pub fn tau_exp(&self) -> f64 {
        self.beta * self.gamma + self.alpha - self.beta
    }

    /// Constant in the gradient bound `r u'(r) <= kappa u(r)`.
    pub fn kappa_grad(&self) -> f64 {
        self.theta() * (self.gamma / (self.alpha - self.beta)).powf(1.0 / self.beta)
    }

    /// Amplitude `A` of the singular solution for a given `L`.
    pub fn amplitude(&self, l: f64) -> f64 {
        let OperatorParams { alpha, beta, gamma } = *self;
        self.theta() * (gamma - l * (gamma - alpha + beta)).powf(1.0 / beta)
    }

    /// Coefficients `(a, b)` of the transformed equation.
    pub fn emden_coefficients(&self, l: f64) -> (f64, f64) {
        let th = self.theta();
        let a = 2.0 * th * (1.0 - l) + self.alpha / self.beta - 1.0;
        let b = th * (self.gamma / self.beta - th * l);
        (a, b)
    }

    /// Trace and determinant of the linearisation of the limit phase system at the origin.
    pub fn linearization(&self, l: f64) -> (f64, f64) {
        let (a, b) = self.emden_coefficients(l);
        let trace = a + (self.beta - 1.0) * b / self.theta();
        (trace, b * self.beta)
    }

    fn q_c_parts(&self) -> (f64, f64) {
        let th = self.theta();
        let gap = self.tau_exp().sqrt() - th.sqrt();
        let num = th * (self.beta + 1.0).powi(2);
        (num, 4.0 * gap * gap - 2.0 * num)
    }

    /// The closed formula for the critical exponent, evaluated as printed.
    /// Negative when its denominator is negative.
    pub fn q_c_literal(&self) -> f64 {
        let (num, den) = self.q_c_parts();
        0.5 + num / den
    }

    /// Critical exponent, extended to `+inf` when the denominator of the
    /// closed formula is not positive (then every `q >= 1` is oscillatory).
    pub fn q_c(&self) -> f64 {
        let (num, den) = self.q_c_parts();
        if den <= 0.0 {
            f64::INFINITY
        } else {
            0.5 + num / den
        }
    }
}

/// `L = q/(2q - 1)`.
pub fn l_from_q(q: f64) -> f64 {
    q / (2.0 * q - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub q: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub theta: f64,
    pub tau_exp: f64,
    pub kappa_grad: f64,
    #[serde(rename = "A_amp")]
    pub a_amp: f64,
    pub a_coef: f64,
    pub b_coef: f64,
    #[serde(with = "inf_as_string")]
    pub q_c: f64,
    #[serde(with = "inf_as_string")]
    pub q_c_literal: f64,
    pub eig_re: f64,
    pub eig_im: f64,
    pub oscillatory: bool,
}

/// All derived constants for the operator and the limit exponent `q >= 1`.
pub fn derive(params: &OperatorParams, q: f64) -> Result<DerivedConstants> {
    params.validate()?;
    if !(q >= 1.0) || q.is_infinite() {
        return Err(invalid(format!("require finite q >= 1 (got q = {q})")));
    }
    let l = l_from_q(q);
    let (a_coef, b_coef) = params.emden_coefficients(l);
    let (trace, det) = params.linearization(l);
    let disc = trace * trace - 4.0 * det;
    let oscillatory = disc < 0.0;
    Ok(DerivedConstants {
        q,
        l,
        theta: params.theta(),
        tau_exp: params.tau_exp(),
        kappa_grad: params.kappa_grad(),
        a_amp: params.amplitude(l),
        a_coef,
        b_coef,
        q_c: params.q_c(),
        q_c_literal: params.q_c_literal(),
        eig_re: 0.5 * trace,
        eig_im: if oscillatory { 0.5 * (-disc).sqrt() } else { 0.0 },
        oscillatory,
    })
}

/// Both closed forms of the critical exponent for a plain Laplacian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QcConsistency {
    pub n: f64,
    #[serde(with = "inf_as_string")]
    pub general: f64,
    #[serde(with = "inf_as_string")]
    pub laplace: f64,
}

/// Compares the general formula with `1/2 + 1/(N - 2 - 2 sqrt(N-1))` for
/// parameters of the form `(N-1, 1, N)`.
pub fn qc_consistency(params: &OperatorParams) -> Result<QcConsistency> {
    params.validate()?;
    if params.beta != 1.0 || (params.gamma - params.alpha - 1.0).abs() > 1e-12 * params.gamma {
        return Err(invalid("qc_consistency needs Laplacian exponents (N-1, 1, N)"));
    }
    let n = params.gamma;
    let general = params.q_c_literal();
    let laplace = 0.5 + 1.0 / (n - 2.0 - 2.0 * (n - 1.0).sqrt());
    if (general - laplace).abs() > 1e-12 * (1.0 + laplace.abs()) {
        return Err(Error::Consistency(format!(
            "q_c formulas disagree at N = {n}: {general} vs {laplace}"
        )));
    }
    Ok(QcConsistency { n, general, laplace })
}

/// Writes non-finite `f64` values as the strings `"inf"`, `"-inf"` and `"nan"`.
pub mod inf_as_string {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.to_ascii_lowercase().as_str() {
                "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
                "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!("not a number: {other}"))),
            },
        }
    }
}

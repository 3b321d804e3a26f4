//! F-divergence generators, convex conjugates, and the exact divergence
//! between two Bernoulli distributions.
//!
//! For a convex generator `f` with `f(1) = 0`, the divergence between
//! distributions P and Q is `D_f(P || Q) = E_Q[f(dP/dQ)]`. Three generators
//! are supported, all in natural log (values in nats):
//!
//! | kind   | f(x)        | f*(t)                          | dom f*   |
//! |--------|-------------|--------------------------------|----------|
//! | `kl`   | x ln x      | e^(t-1)                        | all t    |
//! | `chi2` | (x - 1)^2   | t^2/4 + t  (t >= -2), else -1  | all t    |
//! | `sh`   | (1 - √x)^2  | t / (1 - t)                    | t < 1    |
//!
//! The conjugate is `f*(t) = sup_{x >= 0} { x t - f(x) }`. For chi2 the
//! supremum over x >= 0 is attained at the boundary x = 0 when t < -2,
//! giving the constant -1; this keeps the conjugate total on the reals,
//! which an unconstrained critic output requires.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Clipping bound applied to q and 1-q before ratio formation in
/// [`bernoulli_divergence`], keeping the plug-in value finite for
/// degenerate empirical distributions.
pub const Q_CLIP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DivergenceKind {
    Kl,
    PearsonChiSquared,
    SquaredHellinger,
}

impl DivergenceKind {
    pub const ALL: [DivergenceKind; 3] = [
        DivergenceKind::Kl,
        DivergenceKind::PearsonChiSquared,
        DivergenceKind::SquaredHellinger,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DivergenceKind::Kl => "kl",
            DivergenceKind::PearsonChiSquared => "chi2",
            DivergenceKind::SquaredHellinger => "sh",
        }
    }
}

impl fmt::Display for DivergenceKind {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        out.write_str(self.as_str())
    }
}

impl FromStr for DivergenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kl" => Ok(DivergenceKind::Kl),
            "chi2" => Ok(DivergenceKind::PearsonChiSquared),
            "sh" => Ok(DivergenceKind::SquaredHellinger),
            other => Err(Error::config(format!(
                "divergence: unknown kind {other:?} (expected \"kl\", \"chi2\", or \"sh\")"
            ))),
        }
    }
}

/// Generator value f(x) for x >= 0. KL extends continuously with f(0) = 0.
pub fn f_value(kind: DivergenceKind, x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::domain(format!("f is undefined at x = {x}")));
    }
    Ok(match kind {
        DivergenceKind::Kl => {
            if x == 0.0 {
                0.0
            } else {
                x * x.ln()
            }
        }
        DivergenceKind::PearsonChiSquared => (x - 1.0) * (x - 1.0),
        DivergenceKind::SquaredHellinger => {
            let d = 1.0 - x.sqrt();
            d * d
        }
    })
}

/// Generator derivative f'(x). KL and SH require x > 0.
pub fn f_derivative(kind: DivergenceKind, x: f64) -> Result<f64> {
    let positive_required = !matches!(kind, DivergenceKind::PearsonChiSquared);
    if !(x >= 0.0) || (positive_required && x == 0.0) {
        return Err(Error::domain(format!("f' is undefined at x = {x}")));
    }
    Ok(match kind {
        DivergenceKind::Kl => x.ln() + 1.0,
        DivergenceKind::PearsonChiSquared => 2.0 * (x - 1.0),
        DivergenceKind::SquaredHellinger => 1.0 - 1.0 / x.sqrt(),
    })
}

/// Convex conjugate f*(t) = sup_{x >= 0} { x t - f(x) }.
pub fn conjugate_value(kind: DivergenceKind, t: f64) -> Result<f64> {
    if !t.is_finite() {
        return Err(Error::domain(format!("f* is undefined at t = {t}")));
    }
    match kind {
        DivergenceKind::Kl => Ok((t - 1.0).exp()),
        DivergenceKind::PearsonChiSquared => {
            if t < -2.0 {
                Ok(-1.0)
            } else {
                Ok(t * t / 4.0 + t)
            }
        }
        DivergenceKind::SquaredHellinger => {
            if t >= 1.0 {
                Err(Error::domain(format!(
                    "sh conjugate is undefined at t = {t} (domain t < 1)"
                )))
            } else {
                Ok(t / (1.0 - t))
            }
        }
    }
}

/// Conjugate derivative d/dt f*(t) on the conjugate's domain.
pub fn conjugate_derivative(kind: DivergenceKind, t: f64) -> Result<f64> {
    if !t.is_finite() {
        return Err(Error::domain(format!("f*' is undefined at t = {t}")));
    }
    match kind {
        DivergenceKind::Kl => Ok((t - 1.0).exp()),
        DivergenceKind::PearsonChiSquared => {
            if t < -2.0 {
                Ok(0.0)
            } else {
                Ok(t / 2.0 + 1.0)
            }
        }
        DivergenceKind::SquaredHellinger => {
            if t >= 1.0 {
                Err(Error::domain(format!(
                    "sh conjugate derivative is undefined at t = {t} (domain t < 1)"
                )))
            } else {
                let d = 1.0 - t;
                Ok(1.0 / (d * d))
            }
        }
    }
}

/// Exact divergence between Bern(p) and Bern(q):
/// `q f(p/q) + (1-q) f((1-p)/(1-q))`, with q and 1-q clipped to
/// [[`Q_CLIP`], 1 - [`Q_CLIP`]] before ratio formation.
pub fn bernoulli_divergence(kind: DivergenceKind, p: f64, q: f64) -> Result<f64> {
    for (name, v) in [("p", p), ("q", q)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::domain(format!(
                "bernoulli divergence requires {name} in [0, 1], got {v}"
            )));
        }
    }
    let qc = q.clamp(Q_CLIP, 1.0 - Q_CLIP);
    let pos = qc * f_value(kind, p / qc)?;
    let neg = (1.0 - qc) * f_value(kind, (1.0 - p) / (1.0 - qc))?;
    // Exact value is non-negative; guard against rounding near p = q.
    Ok((pos + neg).max(0.0))
}

//! Reference-value (`μ`) schemes deciding when a learned update is trusted.
//!
//! A candidate with fixed-point residual `r` is accepted iff `r ≤ α·μ`.
//! After each step the residual of the chosen iterate is fed to
//! [`Safeguard::update`], which shrinks `μ` by the scheme's rule when that
//! residual itself passes the same test and leaves it unchanged otherwise.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SafeguardScheme {
    /// Geometric sequence: `μ ← θμ`.
    Geometric { theta: f64 },
    /// Most recent residual: `μ ← r`.
    RecentTerm,
    /// Running average of accepted residuals.
    ArithmeticAverage,
    /// Exponential moving average: `μ ← θr + (1 − θ)μ`.
    ExponentialAverage { theta: f64 },
    /// Max over the last `m` accepted residuals.
    RecentMax { m: usize },
}

impl SafeguardScheme {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SafeguardScheme::Geometric { theta } | SafeguardScheme::ExponentialAverage { theta } => {
                if !(theta > 0.0 && theta < 1.0) {
                    return Err(Error::config(format!("safeguard theta must lie in (0, 1), got {theta}")));
                }
            }
            SafeguardScheme::RecentMax { m: 0 } => {
                return Err(Error::config("recent-max window must be at least 1"));
            }
            _ => {}
        }
        Ok(())
    }

    /// `μ_N/μ_1` guaranteed after `n` consecutive accepts with `r = α·μ`.
    pub fn decay_bound(&self, alpha: f64, n: usize) -> f64 {
        match *self {
            SafeguardScheme::Geometric { theta } => theta.powi(n as i32),
            SafeguardScheme::RecentTerm => alpha.powi(n as i32),
            SafeguardScheme::ArithmeticAverage => {
                (1..=n).map(|l| 1.0 - (1.0 - alpha) / (l as f64 + 1.0)).product()
            }
            SafeguardScheme::ExponentialAverage { theta } => (1.0 - theta * (1.0 - alpha)).powi(n as i32),
            SafeguardScheme::RecentMax { m } => alpha.powi((n / m) as i32),
        }
    }
}

impl fmt::Display for SafeguardScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SafeguardScheme::Geometric { theta } => write!(f, "gs:{theta}"),
            SafeguardScheme::RecentTerm => f.write_str("rt"),
            SafeguardScheme::ArithmeticAverage => f.write_str("aa"),
            SafeguardScheme::ExponentialAverage { theta } => write!(f, "ema:{theta}"),
            SafeguardScheme::RecentMax { m } => write!(f, "rm:{m}"),
        }
    }
}

impl FromStr for SafeguardScheme {
    type Err = Error;

    /// Parses `gs:0.5`, `rt`, `aa`, `ema:0.25`, `rm:3`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let float = |a: Option<&str>| -> Result<f64> {
            let a = a.ok_or_else(|| Error::Parse(format!("safeguard {s:?} needs a parameter")))?;
            a.parse().map_err(|_| Error::Parse(format!("bad safeguard parameter in {s:?}")))
        };
        let scheme = match (name.to_ascii_lowercase().as_str(), arg) {
            ("gs", a) => SafeguardScheme::Geometric { theta: float(a)? },
            ("ema", a) => SafeguardScheme::ExponentialAverage { theta: float(a)? },
            ("rm", Some(a)) => SafeguardScheme::RecentMax {
                m: a.parse().map_err(|_| Error::Parse(format!("bad window in {s:?}")))?,
            },
            ("rt", None) => SafeguardScheme::RecentTerm,
            ("aa", None) => SafeguardScheme::ArithmeticAverage,
            _ => return Err(Error::Parse(format!("unknown safeguard {s:?}"))),
        };
        scheme.validate()?;
        Ok(scheme)
    }
}

/// Scheme plus acceptance factor `α`, i.e. everything needed to start a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafeguardSpec {
    pub scheme: SafeguardScheme,
    pub alpha: f64,
}

impl SafeguardSpec {
    pub fn new(scheme: SafeguardScheme, alpha: f64) -> Result<Self> {
        scheme.validate()?;
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::config(format!("safeguard alpha must lie in [0, 1), got {alpha}")));
        }
        Ok(SafeguardSpec { scheme, alpha })
    }

    pub fn init(&self, r1: f64) -> Result<Safeguard> {
        Safeguard::init(r1, self.scheme, self.alpha)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Safeguard {
    scheme: SafeguardScheme,
    alpha: f64,
    mu: f64,
    accepts: usize,
    buffer: VecDeque<f64>,
}

impl Safeguard {
    /// Start with `μ₁ = r1`, the residual of the initial point.
    pub fn init(r1: f64, scheme: SafeguardScheme, alpha: f64) -> Result<Self> {
        let spec = SafeguardSpec::new(scheme, alpha)?;
        if !(r1 >= 0.0) || !r1.is_finite() {
            return Err(Error::InvalidParameter(format!("initial residual must be finite and >= 0, got {r1}")));
        }
        let mut buffer = VecDeque::new();
        if let SafeguardScheme::RecentMax { m } = scheme {
            buffer.reserve(m + 1);
            buffer.push_back(r1);
        }
        Ok(Safeguard { scheme: spec.scheme, alpha, mu: r1, accepts: 0, buffer })
    }

    pub fn scheme(&self) -> SafeguardScheme {
        self.scheme
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Number of accepted updates so far (`m_k` of the averaging rule).
    pub fn accepts(&self) -> usize {
        self.accepts
    }

    /// Residuals currently in the recent-max window.
    pub fn window(&self) -> impl Iterator<Item = f64> + '_ {
        self.buffer.iter().copied()
    }

    /// `r ≤ α·μ`, ties accepted.
    pub fn check(&self, r: f64) -> bool {
        r <= self.alpha * self.mu
    }

    /// Feed the residual of the iterate just chosen. Returns whether the
    /// accept branch fired.
    pub fn update(&mut self, r_next: f64) -> bool {
        if !self.check(r_next) {
            return false;
        }
        match self.scheme {
            SafeguardScheme::Geometric { theta } => self.mu *= theta,
            SafeguardScheme::RecentTerm => self.mu = r_next,
            SafeguardScheme::ArithmeticAverage => {
                let m = self.accepts as f64;
                self.mu = (r_next + m * self.mu) / (m + 1.0);
            }
            SafeguardScheme::ExponentialAverage { theta } => {
                self.mu = theta * r_next + (1.0 - theta) * self.mu;
            }
            SafeguardScheme::RecentMax { m } => {
                self.buffer.push_back(r_next);
                while self.buffer.len() > m {
                    self.buffer.pop_front();
                }
                self.mu = self.buffer.iter().copied().fold(0.0, f64::max);
            }
        }
        self.accepts += 1;
        true
    }
}

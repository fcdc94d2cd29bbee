//! Hypothesis tests for comparing models: pooled two-proportion z-test,
//! Welch's unequal-variance t-test and the paired t-test.

use std::fmt;
use std::str::FromStr;

use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alternative {
    Greater,
    Less,
    TwoSided,
}

impl fmt::Display for Alternative {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Alternative::Greater => "greater",
            Alternative::Less => "less",
            Alternative::TwoSided => "two-sided",
        })
    }
}

impl FromStr for Alternative {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greater" => Ok(Alternative::Greater),
            "less" => Ok(Alternative::Less),
            "two-sided" | "two_sided" => Ok(Alternative::TwoSided),
            other => Err(Error::Config(format!("unknown alternative {other:?} (greater, less, two-sided)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisResult {
    pub test: &'static str,
    pub statistic: f64,
    pub p_value: f64,
    /// Degrees of freedom, t-tests only.
    pub df: Option<f64>,
    pub alternative: Alternative,
    /// Human-readable echo of the inputs.
    pub inputs: String,
}

impl fmt::Display for HypothesisResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({}): statistic = {:.6}", self.test, self.alternative, self.statistic)?;
        if let Some(df) = self.df {
            write!(f, ", df = {df:.3}")?;
        }
        write!(f, ", p = {:.6e} [{}]", self.p_value, self.inputs)
    }
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `P(Z > x)` without cancellation in the far tail.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// `P(T > x)` for Student's t with `df` degrees of freedom.
pub fn t_sf(x: f64, df: f64) -> f64 {
    assert!(df > 0.0, "degrees of freedom must be positive");
    if x.is_infinite() {
        return if x > 0.0 { 0.0 } else { 1.0 };
    }
    let tail = 0.5 * beta_reg(df / 2.0, 0.5, df / (df + x * x));
    if x >= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

pub fn t_cdf(x: f64, df: f64) -> f64 {
    t_sf(-x, df)
}

fn p_from_tails(stat: f64, alternative: Alternative, sf: impl Fn(f64) -> f64) -> f64 {
    let p = match alternative {
        Alternative::Greater => sf(stat),
        Alternative::Less => sf(-stat),
        Alternative::TwoSided => 2.0 * sf(stat.abs()),
    };
    p.clamp(0.0, 1.0)
}

/// Pooled two-proportion z-test of `p1 - p2` against the given alternative.
pub fn two_proportion_z(p1: f64, n1: u64, p2: f64, n2: u64, alternative: Alternative) -> Result<HypothesisResult> {
    if !(0.0..=1.0).contains(&p1) || !(0.0..=1.0).contains(&p2) || n1 == 0 || n2 == 0 {
        return Err(Error::Config(format!("invalid proportions ({p1}, {n1}), ({p2}, {n2})")));
    }
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let pooled = (p1 * n1f + p2 * n2f) / (n1f + n2f);
    let var = pooled * (1.0 - pooled) * (1.0 / n1f + 1.0 / n2f);
    if var <= 0.0 {
        return Err(Error::Degenerate(format!("pooled proportion {pooled} has zero variance")));
    }
    let z = (p1 - p2) / var.sqrt();
    Ok(HypothesisResult {
        test: "two-proportion z",
        statistic: z,
        p_value: p_from_tails(z, alternative, normal_sf),
        df: None,
        alternative,
        inputs: format!("p1={p1}, n1={n1}, p2={p2}, n2={n2}"),
    })
}

/// Welch's t-test of `mean1 - mean2` from summary statistics (sample sds).
pub fn welch_t(
    mean1: f64,
    sd1: f64,
    n1: u64,
    mean2: f64,
    sd2: f64,
    n2: u64,
    alternative: Alternative,
) -> Result<HypothesisResult> {
    if sd1 <= 0.0 || sd2 <= 0.0 || !sd1.is_finite() || !sd2.is_finite() {
        return Err(Error::Degenerate(format!("standard deviations must be positive, got {sd1} and {sd2}")));
    }
    if n1 < 2 || n2 < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 observations per group, got {n1} and {n2}")));
    }
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let v1 = sd1 * sd1 / n1f;
    let v2 = sd2 * sd2 / n2f;
    let t = (mean1 - mean2) / (v1 + v2).sqrt();
    let df = (v1 + v2).powi(2) / (v1 * v1 / (n1f - 1.0) + v2 * v2 / (n2f - 1.0));
    Ok(HypothesisResult {
        test: "Welch t",
        statistic: t,
        p_value: p_from_tails(t, alternative, |x| t_sf(x, df)),
        df: Some(df),
        alternative,
        inputs: format!("mean1={mean1}, sd1={sd1}, n1={n1}, mean2={mean2}, sd2={sd2}, n2={n2}"),
    })
}

/// Mean and sample standard deviation (n - 1 denominator; 0 for fewer than two values).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Paired t-test on per-pair differences (`first - second`).
pub fn paired_t(differences: &[f64], alternative: Alternative) -> Result<HypothesisResult> {
    let n = differences.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("paired test needs at least 2 differences, got {n}")));
    }
    let (mean, sd) = mean_sd(differences);
    if sd == 0.0 {
        return Err(Error::Degenerate("differences have zero variance".into()));
    }
    let df = (n - 1) as f64;
    let t = mean / (sd / (n as f64).sqrt());
    Ok(HypothesisResult {
        test: "paired t",
        statistic: t,
        p_value: p_from_tails(t, alternative, |x| t_sf(x, df)),
        df: Some(df),
        alternative,
        inputs: format!("n={n}, mean diff={mean}, sd diff={sd}"),
    })
}

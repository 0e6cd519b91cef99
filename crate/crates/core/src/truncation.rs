//! The log-truncation family: high-order functions λ, the truncation map
//! ψ_λ(x) = sign(x)·log(1 + |x| + λ(|x|)), its score weight ψ̇_λ, and the
//! structural constants (c₂, f) behind the weak triangle and homogeneity
//! inequalities.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A high-order function λ: [0,∞) → [0,∞) controlling how aggressively the
/// truncation damps large loss values. Every variant grows super-linearly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum HighOrderFn {
    /// λ(x) = x²/2.
    CatoniQuadratic,
    /// λ(x) = (ε/(1+ε) ∨ √((1−ε)/(1+ε))) · x^{1+ε}.
    MinskerPower { epsilon: f64 },
    /// λ(x) = x^{1+ε}/(1+ε).
    ChenPower { epsilon: f64 },
    /// λ(x) = [2q^{1−2/(1+ε)} + q^{2−2/(1+ε)}]^{−(1+ε)/2} · x^{1+ε}, q = (1−ε)/ε.
    LeePower { epsilon: f64 },
    /// λ(x) = (1+ε)^{−(1+ε)/2}·(1−ε)^{1−(1+ε)/2}·ε^ε · x^{1+ε}.
    LamPower { epsilon: f64 },
    /// λ(x) = Σ_{k=2}^m x^k/k!, m ≥ 2.
    XuPolySum { m: u32 },
}

/// 0⁰ is taken as 1 so the ε = 1 endpoint of each power-law formula is the
/// continuous limit.
fn pow00(base: f64, exp: f64) -> f64 {
    if base == 0.0 && exp == 0.0 {
        1.0
    } else {
        base.powf(exp)
    }
}

impl HighOrderFn {
    /// Parse a CLI-facing variant name: "catoni", "chen", "minsker", "lee",
    /// "lam" (power variants take ε from the run config) or "xu:<m>".
    pub fn from_name(name: &str, epsilon: f64) -> Result<Self> {
        let fn_ = match name {
            "catoni" => HighOrderFn::CatoniQuadratic,
            "chen" => HighOrderFn::ChenPower { epsilon },
            "minsker" => HighOrderFn::MinskerPower { epsilon },
            "lee" => HighOrderFn::LeePower { epsilon },
            "lam" => HighOrderFn::LamPower { epsilon },
            _ => {
                if let Some(m) = name.strip_prefix("xu:") {
                    let m: u32 = m
                        .parse()
                        .map_err(|_| Error::Config(format!("bad xu order: {name}")))?;
                    HighOrderFn::XuPolySum { m }
                } else {
                    return Err(Error::Config(format!("unknown truncation variant: {name}")));
                }
            }
        };
        fn_.validate()?;
        Ok(fn_)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            HighOrderFn::CatoniQuadratic => Ok(()),
            HighOrderFn::MinskerPower { epsilon }
            | HighOrderFn::ChenPower { epsilon }
            | HighOrderFn::LeePower { epsilon }
            | HighOrderFn::LamPower { epsilon } => {
                if epsilon > 0.0 && epsilon <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::Domain(format!("epsilon must be in (0,1], got {epsilon}")))
                }
            }
            HighOrderFn::XuPolySum { m } => {
                if m >= 2 {
                    Ok(())
                } else {
                    Err(Error::Domain(format!("xu poly-sum needs m >= 2, got {m}")))
                }
            }
        }
    }

    /// Moment order 1+ε served by this variant (CatoniQuadratic is the ε = 1
    /// endpoint, XuPolySum needs all moments up to m).
    pub fn one_plus_epsilon(&self) -> f64 {
        match *self {
            HighOrderFn::CatoniQuadratic => 2.0,
            HighOrderFn::MinskerPower { epsilon }
            | HighOrderFn::ChenPower { epsilon }
            | HighOrderFn::LeePower { epsilon }
            | HighOrderFn::LamPower { epsilon } => 1.0 + epsilon,
            HighOrderFn::XuPolySum { m } => m as f64,
        }
    }

    /// The multiplicative coefficient in front of x^{1+ε} for the power-law
    /// variants; `None` for XuPolySum.
    pub fn power_coefficient(&self) -> Option<f64> {
        match *self {
            HighOrderFn::CatoniQuadratic => Some(0.5),
            HighOrderFn::ChenPower { epsilon } => Some(1.0 / (1.0 + epsilon)),
            HighOrderFn::MinskerPower { epsilon } => {
                let a = epsilon / (1.0 + epsilon);
                let b = ((1.0 - epsilon) / (1.0 + epsilon)).max(0.0).sqrt();
                Some(a.max(b))
            }
            HighOrderFn::LeePower { epsilon } => {
                let q = (1.0 - epsilon) / epsilon;
                let e1 = 1.0 - 2.0 / (1.0 + epsilon);
                let e2 = 2.0 - 2.0 / (1.0 + epsilon);
                Some((2.0 * pow00(q, e1) + pow00(q, e2)).powf(-(1.0 + epsilon) / 2.0))
            }
            HighOrderFn::LamPower { epsilon } => {
                let half = (1.0 + epsilon) / 2.0;
                Some(
                    (1.0 + epsilon).powf(-half)
                        * pow00(1.0 - epsilon, 1.0 - half)
                        * epsilon.powf(epsilon),
                )
            }
            HighOrderFn::XuPolySum { .. } => None,
        }
    }
}

/// λ evaluated at x ≥ 0 with the exact published coefficient.
pub fn lambda_eval(fn_: HighOrderFn, x: f64) -> Result<f64> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::Domain(format!("lambda domain is finite x >= 0, got {x}")));
    }
    fn_.validate()?;
    Ok(lambda_unchecked(fn_, x))
}

fn lambda_unchecked(fn_: HighOrderFn, x: f64) -> f64 {
    match fn_ {
        HighOrderFn::XuPolySum { m } => {
            // sum_{k=2}^m x^k/k!, accumulated term by term
            let mut term = x; // x^1/1!
            let mut sum = 0.0;
            for k in 2..=m {
                term *= x / k as f64;
                sum += term;
            }
            sum
        }
        _ => {
            let c = fn_.power_coefficient().expect("power variant");
            c * x.powf(fn_.one_plus_epsilon())
        }
    }
}

/// Derivative λ'(x) for x ≥ 0 (one-sided at 0).
fn lambda_deriv(fn_: HighOrderFn, x: f64) -> f64 {
    match fn_ {
        HighOrderFn::XuPolySum { m } => {
            // sum_{k=2}^m x^{k-1}/(k-1)!
            let mut term = 1.0; // x^0/0!
            let mut sum = 0.0;
            for k in 2..=m {
                term *= x / (k - 1) as f64;
                sum += term;
            }
            sum
        }
        _ => {
            let c = fn_.power_coefficient().expect("power variant");
            let b = fn_.one_plus_epsilon();
            c * b * x.powf(b - 1.0)
        }
    }
}

/// The truncation map with its tuning scale α.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationSpec {
    pub lambda: HighOrderFn,
    pub alpha: f64,
}

impl TruncationSpec {
    pub fn new(lambda: HighOrderFn, alpha: f64) -> Result<Self> {
        lambda.validate()?;
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
        }
        Ok(TruncationSpec { lambda, alpha })
    }

    /// ψ_λ(α·x)/α, the per-sample contribution to the truncated risk.
    pub fn apply(&self, x: f64) -> f64 {
        psi_eval_unchecked(self.lambda, self.alpha * x) / self.alpha
    }

    /// ψ̇_λ(α·x), the multiplicative score weight in (0, 1].
    pub fn score_weight(&self, x: f64) -> f64 {
        psi_deriv_unchecked(self.lambda, self.alpha * x)
    }
}

/// ψ_λ(x) = sign(x)·log(1 + |x| + λ(|x|)). Odd and non-decreasing.
pub fn psi_eval(fn_: HighOrderFn, x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("psi domain is finite x, got {x}")));
    }
    fn_.validate()?;
    Ok(psi_eval_unchecked(fn_, x))
}

#[inline]
fn psi_eval_unchecked(fn_: HighOrderFn, x: f64) -> f64 {
    let ax = x.abs();
    // ln_1p keeps the small-|x| regime accurate: psi(x) = x + O(x^2).
    x.signum() * (ax + lambda_unchecked(fn_, ax)).ln_1p()
}

/// d/dx ψ_λ(x) = (1 + λ'(|x|)) / (1 + |x| + λ(|x|)); even in x, equal to 1 at 0.
pub fn psi_deriv(fn_: HighOrderFn, x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("psi' domain is finite x, got {x}")));
    }
    fn_.validate()?;
    Ok(psi_deriv_unchecked(fn_, x))
}

#[inline]
fn psi_deriv_unchecked(fn_: HighOrderFn, x: f64) -> f64 {
    let ax = x.abs();
    (1.0 + lambda_deriv(fn_, ax)) / (1.0 + ax + lambda_unchecked(fn_, ax))
}

/// The homogeneity function f in λ(t·x) ≤ f(t)·λ(x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum HomogeneityFn {
    /// f(t) = t^exponent (power-law variants).
    Power { exponent: f64 },
    /// f(t) = max(t², t^m) for the polynomial sum of order m.
    PolyMax { m: u32 },
}

impl HomogeneityFn {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            HomogeneityFn::Power { exponent } => t.powf(exponent),
            HomogeneityFn::PolyMax { m } => t.powi(2).max(t.powi(m as i32)),
        }
    }

    /// f⁻¹ on (0,∞). Closed form for the power case, bisection for PolyMax.
    pub fn inverse(&self, y: f64) -> f64 {
        match *self {
            HomogeneityFn::Power { exponent } => y.powf(1.0 / exponent),
            HomogeneityFn::PolyMax { .. } => {
                if y <= 0.0 {
                    return 0.0;
                }
                let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
                while self.eval(hi) < y {
                    hi *= 2.0;
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.eval(mid) < y {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }
}

/// The (c₂, f) pair: λ(x+y) ≤ c₂·(λ(x)+λ(y)) and λ(t·x) ≤ f(t)·λ(x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C1Constants {
    pub c2: f64,
    pub f: HomogeneityFn,
}

/// Structural constants for the weak triangle and homogeneity inequalities.
/// Power-law λ with exponent β = 1+ε gives c₂ = 2^ε and f(t) = t^{1+ε};
/// the polynomial sum of order m gives c₂ = 2^{m−1} and f(t) = max(t², t^m).
pub fn c1_constants(fn_: HighOrderFn) -> C1Constants {
    match fn_ {
        HighOrderFn::XuPolySum { m } => C1Constants {
            c2: 2f64.powi(m as i32 - 1),
            f: HomogeneityFn::PolyMax { m },
        },
        _ => {
            let beta = fn_.one_plus_epsilon();
            C1Constants {
                c2: 2f64.powf(beta - 1.0),
                f: HomogeneityFn::Power { exponent: beta },
            }
        }
    }
}

/// Outcome of checking −log(1−x+λ(|x|)) ≤ ψ(x) ≤ log(1+x+λ(|x|)) on a
/// heavy-tailed sample of points. `worst_slack` is the smallest margin seen
/// (negative means a violation by that amount).
#[derive(Debug, Clone, Copy)]
pub struct SandwichReport {
    pub pass: bool,
    pub worst_slack: f64,
    pub worst_x: f64,
    pub checked: usize,
}

/// Verify the defining sandwich inequality at `n_samples` random points plus
/// a fixed geometric grid, wherever both log arguments are positive.
/// Violations beyond 1e−12 absolute slack fail the report; nothing throws.
pub fn verify_sandwich(fn_: HighOrderFn, n_samples: usize, rng_seed: u64) -> Result<SandwichReport> {
    fn_.validate()?;
    if n_samples < 1 {
        return Err(Error::Domain("n_samples must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut worst_slack = f64::INFINITY;
    let mut worst_x = 0.0;
    let mut checked = 0usize;

    let mut probe = |x: f64| {
        let lam = lambda_unchecked(fn_, x.abs());
        let psi = psi_eval_unchecked(fn_, x);
        let upper_arg = 1.0 + x + lam;
        let lower_arg = 1.0 - x + lam;
        if upper_arg > 0.0 {
            let slack = upper_arg.ln() - psi;
            if slack < worst_slack {
                worst_slack = slack;
                worst_x = x;
            }
            checked += 1;
        }
        if lower_arg > 0.0 {
            let slack = psi + lower_arg.ln();
            if slack < worst_slack {
                worst_slack = slack;
                worst_x = x;
            }
            checked += 1;
        }
    };

    // geometric grid out to 1e6, both signs, plus zero
    probe(0.0);
    let mut g = 1e-9;
    while g <= 1e6 {
        probe(g);
        probe(-g);
        g *= 1.15;
    }
    // heavy-tailed random probes: t-like ratio of normal to uniform
    for _ in 0..n_samples {
        let num: f64 = rng.gen_range(-1.0..1.0);
        let den: f64 = rng.gen_range(0.0..1.0f64).max(1e-12);
        probe(10.0 * num / den.sqrt());
    }

    Ok(SandwichReport {
        pass: worst_slack >= -1e-12,
        worst_slack,
        worst_x,
        checked,
    })
}

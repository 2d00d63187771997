//! Multi-asset Black-Scholes terminal-boundary-value problems on the
//! truncated space-time box `[0, s_max]^d × [0, T]`.
//!
//! Points are laid out as `(S₁, …, S_d, t)` throughout the crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PayoffSpec {
    /// `max(K − S₁, 0)`
    Put { strike: f64 },
    /// `max(S₁ − S₂, 0)`
    Exchange,
    /// `max(Σ αᵢ Sᵢ − K, 0)`
    BasketCall { strike: f64, alpha: Vec<f64> },
}

/// Dirichlet data on the spatial faces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundarySpec {
    /// `g(0, t) = K e^{-r(T-t)}`, `g(s_max, t) = 0`.
    Put1d,
    /// `g(0, S₂, t) = 0`, `g(S₁, 0, t) = S₁`, far faces use the Margrabe price.
    Exchange2d,
    /// `g = max(Σ αᵢ Sᵢ − K e^{-r(T-t)}, 0)` on every face.
    BasketAllFaces,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BsProblem {
    pub d: usize,
    pub sigma: Vec<f64>,
    pub rho: Vec<Vec<f64>>,
    pub r: f64,
    pub t_max: f64,
    pub s_max: f64,
    pub payoff: PayoffSpec,
    pub boundary: BoundarySpec,
}

/// Coefficients of `∂ₜ + Σᵢⱼ Aᵢⱼ ∂ᵢⱼ + Σᵢ bᵢ ∂ᵢ + c` at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorCoeffs {
    pub second: Vec<Vec<f64>>,
    pub first: Vec<f64>,
    pub zeroth: f64,
}

impl BsProblem {
    /// Validates and builds a problem. The correlation matrix must factor
    /// (Cholesky pivot > 1e-12).
    pub fn new(
        sigma: Vec<f64>,
        rho: Vec<Vec<f64>>,
        r: f64,
        t_max: f64,
        s_max: f64,
        payoff: PayoffSpec,
        boundary: BoundarySpec,
    ) -> Result<Self> {
        let prob = BsProblem {
            d: sigma.len(),
            sigma,
            rho,
            r,
            t_max,
            s_max,
            payoff,
            boundary,
        };
        prob.validate()?;
        Ok(prob)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d;
        let bad = |msg: String| Err(Error::InvalidProblem(msg));
        if d == 0 || self.sigma.len() != d {
            return bad(format!("sigma must have d = {d} > 0 entries"));
        }
        if self.sigma.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return bad("every sigma must be positive and finite".into());
        }
        if !(self.r >= 0.0 && self.r.is_finite()) {
            return bad(format!("rate r must be non-negative, got {}", self.r));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return bad(format!("horizon T must be positive, got {}", self.t_max));
        }
        if !(self.s_max > 0.0 && self.s_max.is_finite()) {
            return bad(format!("s_max must be positive, got {}", self.s_max));
        }
        if self.rho.len() != d || self.rho.iter().any(|row| row.len() != d) {
            return bad(format!("rho must be {d}x{d}"));
        }
        for i in 0..d {
            if self.rho[i][i] != 1.0 {
                return bad(format!("rho[{i}][{i}] must be 1"));
            }
            for j in 0..d {
                let v = self.rho[i][j];
                if !(v.abs() <= 1.0) || v != self.rho[j][i] {
                    return bad(format!("rho must be symmetric with |rho_ij| <= 1 (entry {i},{j})"));
                }
            }
        }
        oracle::cholesky_lower(&self.rho)?;
        match (&self.payoff, self.boundary) {
            (PayoffSpec::Put { strike }, BoundarySpec::Put1d) => {
                if d != 1 {
                    return bad("put problems are one-dimensional".into());
                }
                if !(*strike > 0.0) {
                    return bad("strike must be positive".into());
                }
            }
            (PayoffSpec::Exchange, BoundarySpec::Exchange2d) => {
                if d != 2 {
                    return bad("exchange problems are two-dimensional".into());
                }
            }
            (PayoffSpec::BasketCall { strike, alpha }, BoundarySpec::BasketAllFaces) => {
                if !(*strike > 0.0) {
                    return bad("strike must be positive".into());
                }
                if alpha.len() != d || alpha.iter().any(|&a| !(a >= 0.0)) {
                    return bad(format!("alpha must have {d} non-negative entries"));
                }
            }
            _ => return bad("payoff and boundary rule do not match".into()),
        }
        Ok(())
    }

    /// Spatial dimension plus time.
    pub fn input_dim(&self) -> usize {
        self.d + 1
    }

    pub fn payoff_value(&self, s: &[f64]) -> Result<f64> {
        self.check_spatial(s)?;
        Ok(self.payoff_unchecked(s))
    }

    pub(crate) fn payoff_unchecked(&self, s: &[f64]) -> f64 {
        match &self.payoff {
            PayoffSpec::Put { strike } => (strike - s[0]).max(0.0),
            PayoffSpec::Exchange => (s[0] - s[1]).max(0.0),
            PayoffSpec::BasketCall { strike, alpha } => {
                let basket: f64 = alpha.iter().zip(s).map(|(a, x)| a * x).sum();
                (basket - strike).max(0.0)
            }
        }
    }

    /// Dirichlet value `g(S, t)`; the point must sit on a spatial face.
    pub fn boundary_value(&self, point: &[f64]) -> Result<f64> {
        self.check_point(point)?;
        let s = &point[..self.d];
        if !s.iter().any(|&x| x == 0.0 || x == self.s_max) {
            return Err(Error::Domain(format!(
                "boundary_value needs a point on a spatial face, got {point:?}"
            )));
        }
        Ok(self.boundary_unchecked(point))
    }

    pub(crate) fn boundary_unchecked(&self, point: &[f64]) -> f64 {
        let d = self.d;
        let t = point[d];
        let tau = self.t_max - t;
        match (&self.payoff, self.boundary) {
            (PayoffSpec::Put { strike }, BoundarySpec::Put1d) => {
                if point[0] == 0.0 {
                    strike * (-self.r * tau).exp()
                } else {
                    0.0
                }
            }
            (_, BoundarySpec::Exchange2d) => {
                let (s1, s2) = (point[0], point[1]);
                if s1 == 0.0 {
                    0.0
                } else if s2 == 0.0 {
                    s1
                } else {
                    oracle::margrabe_tau(s1, s2, tau, self.exchange_sigma())
                }
            }
            (PayoffSpec::BasketCall { strike, alpha }, BoundarySpec::BasketAllFaces) => {
                let basket: f64 = alpha.iter().zip(&point[..d]).map(|(a, x)| a * x).sum();
                (basket - strike * (-self.r * tau).exp()).max(0.0)
            }
            _ => unreachable!("validated pairing"),
        }
    }

    /// Combined volatility `sqrt(σ₁² + σ₂² − 2ρσ₁σ₂)` of an exchange problem.
    pub fn exchange_sigma(&self) -> f64 {
        let (a, b) = (self.sigma[0], self.sigma[1]);
        (a * a + b * b - 2.0 * self.rho[0][1] * a * b).max(0.0).sqrt()
    }

    pub fn operator_coeffs(&self, point: &[f64]) -> Result<OperatorCoeffs> {
        self.check_point(point)?;
        let d = self.d;
        let s = &point[..d];
        let second = (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| 0.5 * self.rho[i][j] * self.sigma[i] * self.sigma[j] * s[i] * s[j])
                    .collect()
            })
            .collect();
        let first = s.iter().map(|&x| self.r * x).collect();
        Ok(OperatorCoeffs {
            second,
            first,
            zeroth: -self.r,
        })
    }

    /// Applies the operator to explicit derivative data:
    /// `v_t + Σ Aᵢⱼ hessᵢⱼ + Σ bᵢ gradᵢ − r v`.
    pub fn apply_operator(
        &self,
        point: &[f64],
        value: f64,
        v_t: f64,
        grad: &[f64],
        hess: &[Vec<f64>],
    ) -> Result<f64> {
        let c = self.operator_coeffs(point)?;
        if grad.len() != self.d || hess.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: grad.len(),
            });
        }
        let mut acc = v_t + c.zeroth * value;
        for i in 0..self.d {
            acc += c.first[i] * grad[i];
            for j in 0..self.d {
                acc += c.second[i][j] * hess[i][j];
            }
        }
        Ok(acc)
    }

    fn check_spatial(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: s.len(),
            });
        }
        Ok(())
    }

    fn check_point(&self, point: &[f64]) -> Result<()> {
        if point.len() != self.d + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.d + 1,
                got: point.len(),
            });
        }
        if point.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain(format!("non-finite point {point:?}")));
        }
        Ok(())
    }

    /// Closed-form price when one exists (put and exchange problems).
    pub fn exact_price(&self, point: &[f64]) -> Option<f64> {
        let t = point[self.d];
        match &self.payoff {
            PayoffSpec::Put { strike } => {
                oracle::bs_put_exact(point[0], t, *strike, self.r, self.sigma[0], self.t_max).ok()
            }
            PayoffSpec::Exchange => oracle::margrabe_exact(point[0], point[1], t, self).ok(),
            PayoffSpec::BasketCall { .. } => None,
        }
    }

    pub fn has_closed_form(&self) -> bool {
        !matches!(self.payoff, PayoffSpec::BasketCall { .. })
    }
}

/// Single-asset European put: σ = 0.2, r = 0.05, T = 0.5, K = 10, s_max = 30.
pub fn make_put_1d() -> BsProblem {
    BsProblem::new(
        vec![0.2],
        vec![vec![1.0]],
        0.05,
        0.5,
        30.0,
        PayoffSpec::Put { strike: 10.0 },
        BoundarySpec::Put1d,
    )
    .expect("preset is valid")
}

/// Two-asset exchange option: σ = (0.2, 0.2), ρ₁₂ = 0.5, r = 0.05, T = 1, s_max = 40.
pub fn make_exchange_2d() -> BsProblem {
    BsProblem::new(
        vec![0.2, 0.2],
        vec![vec![1.0, 0.5], vec![0.5, 1.0]],
        0.05,
        1.0,
        40.0,
        PayoffSpec::Exchange,
        BoundarySpec::Exchange2d,
    )
    .expect("preset is valid")
}

/// Four-asset basket call with equal weights, K = 1, T = 1, s_max = 4.
pub fn make_basket_4d() -> BsProblem {
    let rho = vec![
        vec![1.0, 0.1, -0.4, 0.2],
        vec![0.1, 1.0, 0.3, -0.1],
        vec![-0.4, 0.3, 1.0, 0.0],
        vec![0.2, -0.1, 0.0, 1.0],
    ];
    BsProblem::new(
        vec![0.4, 0.25, 0.3, 0.4],
        rho,
        0.05,
        1.0,
        4.0,
        PayoffSpec::BasketCall {
            strike: 1.0,
            alpha: vec![0.25; 4],
        },
        BoundarySpec::BasketAllFaces,
    )
    .expect("preset is valid")
}

/// Looks up one of the canonical presets by name.
pub fn preset(name: &str) -> Result<BsProblem> {
    match name {
        "put1d" => Ok(make_put_1d()),
        "exchange2d" => Ok(make_exchange_2d()),
        "basket4d" => Ok(make_basket_4d()),
        other => Err(Error::InvalidConfig(format!(
            "problem.preset: unknown preset `{other}` (expected put1d, exchange2d or basket4d)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn put_preset_data() {
        let p = make_put_1d();
        assert_eq!(p.boundary_value(&[0.0, 0.5]).unwrap(), 10.0);
        let v = p.boundary_value(&[0.0, 0.0]).unwrap();
        assert!(close(v, 10.0 * (-0.025f64).exp(), 1e-14));
        assert!(close(v, 9.753_099_120_283_326, 1e-12));
        assert_eq!(p.payoff_value(&[7.0]).unwrap(), 3.0);
        assert_eq!(p.boundary_value(&[30.0, 0.4999]).unwrap(), 0.0);
        assert_eq!(p.payoff_value(&[30.0]).unwrap(), 0.0);
    }

    #[test]
    fn exchange_preset_data() {
        let p = make_exchange_2d();
        assert_eq!(p.payoff_value(&[30.0, 10.0]).unwrap(), 20.0);
        assert_eq!(p.boundary_value(&[25.0, 0.0, 0.3]).unwrap(), 25.0);
        assert_eq!(p.boundary_value(&[0.0, 17.0, 0.3]).unwrap(), 0.0);
        let far = p.boundary_value(&[40.0, 40.0, 0.0]).unwrap();
        assert!(close(far, 2.0 * 1.5931, 2e-4), "{far}");
    }

    #[test]
    fn basket_preset_data() {
        let p = make_basket_4d();
        assert_eq!(p.payoff_value(&[1.0, 1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(p.payoff_value(&[2.0, 2.0, 2.0, 2.0]).unwrap(), 1.0);
        assert!(close(p.boundary_value(&[4.0, 1.0, 1.0, 1.0, 1.0]).unwrap(), 0.75, 1e-15));
        // boundary at t = T matches the payoff on every face
        for face in 0..8 {
            let mut pt = vec![1.3, 0.7, 2.1, 0.2, 1.0];
            pt[face / 2] = if face % 2 == 0 { 0.0 } else { 4.0 };
            let g = p.boundary_value(&pt).unwrap();
            assert!(close(g, p.payoff_value(&pt[..4]).unwrap(), 1e-15));
        }
    }

    #[test]
    fn boundary_rejects_interior_points() {
        let p = make_put_1d();
        assert!(p.boundary_value(&[5.0, 0.1]).is_err());
        assert!(p.boundary_value(&[5.0]).is_err());
    }

    #[test]
    fn operator_coefficients() {
        let p = make_put_1d();
        let c = p.operator_coeffs(&[0.0, 0.1]).unwrap();
        assert_eq!(c.second[0][0], 0.0);
        assert_eq!(c.first[0], 0.0);
        assert_eq!(c.zeroth, -0.05);
        let c = p.operator_coeffs(&[10.0, 0.1]).unwrap();
        assert!(close(c.second[0][0], 2.0, 1e-14));

        let e = make_exchange_2d();
        let c = e.operator_coeffs(&[20.0, 20.0, 0.0]).unwrap();
        assert!(close(c.second[0][1], 4.0, 1e-13));
        assert_eq!(c.second[0][1], c.second[1][0]);
        let c = e.operator_coeffs(&[0.0, 20.0, 0.0]).unwrap();
        assert_eq!(c.second[0][0], 0.0);
        assert_eq!(c.second[0][1], 0.0);
    }

    #[test]
    fn manufactured_linear_function_has_zero_residual() {
        // V = S₁: first-order and discount terms cancel
        let p = make_basket_4d();
        let pt = [1.2, 0.4, 2.2, 3.1, 0.3];
        let hess = vec![vec![0.0; 4]; 4];
        let res = p
            .apply_operator(&pt, pt[0], 0.0, &[1.0, 0.0, 0.0, 0.0], &hess)
            .unwrap();
        assert!(res.abs() < 1e-15);
    }

    #[test]
    fn rejects_invalid_parameters() {
        let base = make_exchange_2d();
        let mut p = base.clone();
        p.rho[0][1] = 0.7;
        assert!(p.validate().is_err());
        let mut p = base.clone();
        p.sigma[1] = 0.0;
        assert!(p.validate().is_err());
        let mut p = base.clone();
        p.s_max = 0.0;
        assert!(p.validate().is_err());
        let mut p = base;
        p.rho = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        assert!(matches!(p.validate(), Err(Error::NotPositiveDefinite { .. })));
        assert!(preset("nope").is_err());
    }

    #[test]
    fn payoffs_are_non_negative() {
        for p in [make_put_1d(), make_exchange_2d(), make_basket_4d()] {
            for k in 0..50 {
                let s: Vec<f64> = (0..p.d).map(|i| ((k * 7 + i * 3) % 11) as f64 * p.s_max / 10.0).collect();
                assert!(p.payoff_value(&s).unwrap() >= 0.0);
            }
        }
    }
}

//! Single-hidden-layer RBF network over space-time inputs `(S₁, …, S_d, t)`.
//!
//! `V̂(x) = Σₙ Wₙ φ(uₙ(x)) + bias` with `uₙ(x) = Σᵢ Cᵢₙ² (xᵢ − x̄ᵢₙ)²`.
//! In scalar-shape mode every coordinate of neuron `n` shares one `Cₙ`.
//!
//! The loss gradient is assembled in closed form. Writing `qᵢ = Cᵢ²`,
//! `δᵢ = xᵢ − x̄ᵢ` and `gᵢ = 2qᵢδᵢ = ∂u/∂xᵢ`, the Black-Scholes operator
//! applied to one kernel is
//!
//! ```text
//! Lφ = φ'·P + φ''·Q − rφ
//! P  = g_t + Σᵢ r Sᵢ gᵢ + Σᵢ qᵢ (σᵢSᵢ)²
//! Q  = ½ Σᵢⱼ ρᵢⱼ (σᵢSᵢgᵢ)(σⱼSⱼgⱼ)
//! ```
//!
//! and its derivatives with respect to `δ` and `q` follow by the chain rule
//! with `φ'''` entering through `Q`.

use serde::{Deserialize, Serialize};

use crate::blocked::{self, DataBlocks, OpBlocks};
use crate::error::{Error, Result};
use crate::kernels::KernelKind;
use crate::problems::BsProblem;
use crate::sampling::{PointSampler, Points, RngStream, StreamLabel, TrainingSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeMode {
    Scalar,
    PerDimension,
}

impl ShapeMode {
    /// Scalar shapes for one asset, per-dimension shapes otherwise.
    pub fn for_dim(d: usize) -> Self {
        if d == 1 {
            ShapeMode::Scalar
        } else {
            ShapeMode::PerDimension
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbfNetwork {
    d: usize,
    kind: KernelKind,
    shape_mode: ShapeMode,
    /// N × (d+1), row-major.
    centres: Vec<f64>,
    /// N × (d+1) or N × 1, row-major.
    shapes: Vec<f64>,
    weights: Vec<f64>,
    bias: f64,
}

/// Flat parameters: centres, shapes, weights, bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub pde: f64,
    pub terminal: f64,
    pub boundary: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(pde: f64, terminal: f64, boundary: f64) -> Self {
        LossBreakdown {
            pde,
            terminal,
            boundary,
            total: pde + terminal + boundary,
        }
    }
}

impl RbfNetwork {
    pub fn new(
        d: usize,
        kind: KernelKind,
        shape_mode: ShapeMode,
        centres: Vec<f64>,
        shapes: Vec<f64>,
        weights: Vec<f64>,
        bias: f64,
    ) -> Result<Self> {
        if d == 0 || d > MAX_DIM {
            return Err(Error::UnsupportedDimension(d));
        }
        let n = weights.len();
        if n == 0 {
            return Err(Error::InvalidConfig("network needs at least one neuron".into()));
        }
        let dim = d + 1;
        let shape_cols = match shape_mode {
            ShapeMode::Scalar => 1,
            ShapeMode::PerDimension => dim,
        };
        if centres.len() != n * dim {
            return Err(Error::LengthMismatch {
                expected: n * dim,
                got: centres.len(),
            });
        }
        if shapes.len() != n * shape_cols {
            return Err(Error::LengthMismatch {
                expected: n * shape_cols,
                got: shapes.len(),
            });
        }
        let net = RbfNetwork {
            d,
            kind,
            shape_mode,
            centres,
            shapes,
            weights,
            bias,
        };
        if !net.all_finite() {
            return Err(Error::Domain("network parameters must be finite".into()));
        }
        Ok(net)
    }

    fn all_finite(&self) -> bool {
        self.bias.is_finite()
            && self.centres.iter().all(|x| x.is_finite())
            && self.shapes.iter().all(|x| x.is_finite())
            && self.weights.iter().all(|x| x.is_finite())
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn input_dim(&self) -> usize {
        self.d + 1
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn shape_mode(&self) -> ShapeMode {
        self.shape_mode
    }

    pub fn n_neurons(&self) -> usize {
        self.weights.len()
    }

    pub fn centres(&self) -> &[f64] {
        &self.centres
    }

    pub fn centre(&self, n: usize) -> &[f64] {
        let dim = self.input_dim();
        &self.centres[n * dim..(n + 1) * dim]
    }

    pub fn shapes(&self) -> &[f64] {
        &self.shapes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn shape_cols(&self) -> usize {
        match self.shape_mode {
            ShapeMode::Scalar => 1,
            ShapeMode::PerDimension => self.input_dim(),
        }
    }

    pub fn param_count(&self) -> usize {
        let n = self.n_neurons();
        n * self.input_dim() + n * self.shape_cols() + n + 1
    }

    pub fn flatten(&self) -> ParamVector {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend_from_slice(&self.centres);
        v.extend_from_slice(&self.shapes);
        v.extend_from_slice(&self.weights);
        v.push(self.bias);
        ParamVector(v)
    }

    /// Rebuilds a network with this one's structure from flat parameters.
    pub fn unflatten(&self, p: &ParamVector) -> Result<RbfNetwork> {
        self.unflatten_slice(&p.0)
    }

    pub(crate) fn unflatten_slice(&self, p: &[f64]) -> Result<RbfNetwork> {
        if p.len() != self.param_count() {
            return Err(Error::LengthMismatch {
                expected: self.param_count(),
                got: p.len(),
            });
        }
        let a = self.centres.len();
        let b = a + self.shapes.len();
        let c = b + self.weights.len();
        Ok(RbfNetwork {
            d: self.d,
            kind: self.kind,
            shape_mode: self.shape_mode,
            centres: p[..a].to_vec(),
            shapes: p[a..b].to_vec(),
            weights: p[b..c].to_vec(),
            bias: p[c],
        })
    }

    /// Appends neurons, keeping every existing parameter verbatim.
    pub fn with_appended(&self, centres: &[f64], shapes: &[f64], weights: &[f64]) -> Result<RbfNetwork> {
        let mut net = self.clone();
        net.centres.extend_from_slice(centres);
        net.shapes.extend_from_slice(shapes);
        net.weights.extend_from_slice(weights);
        RbfNetwork::new(
            net.d,
            net.kind,
            net.shape_mode,
            net.centres,
            net.shapes,
            net.weights,
            net.bias,
        )
    }

    /// Same network with neurons reordered by `perm` (`perm[i]` = old index).
    pub fn permuted(&self, perm: &[usize]) -> Result<RbfNetwork> {
        let dim = self.input_dim();
        let sc = self.shape_cols();
        let mut centres = Vec::with_capacity(self.centres.len());
        let mut shapes = Vec::with_capacity(self.shapes.len());
        let mut weights = Vec::with_capacity(self.weights.len());
        for &i in perm {
            centres.extend_from_slice(&self.centres[i * dim..(i + 1) * dim]);
            shapes.extend_from_slice(&self.shapes[i * sc..(i + 1) * sc]);
            weights.push(self.weights[i]);
        }
        RbfNetwork::new(self.d, self.kind, self.shape_mode, centres, shapes, weights, self.bias)
    }

    fn check_point(&self, point: &[f64]) -> Result<()> {
        if point.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: point.len(),
            });
        }
        if point.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain(format!("non-finite point {point:?}")));
        }
        Ok(())
    }

    fn check_problem(&self, prob: &BsProblem) -> Result<()> {
        if prob.d != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: prob.d,
            });
        }
        Ok(())
    }

    pub fn evaluate(&self, point: &[f64]) -> Result<f64> {
        self.check_point(point)?;
        let pts = Points::from_flat(self.input_dim(), point.to_vec())?;
        Ok(blocked::values(self, &pts)[0])
    }

    pub fn evaluate_many(&self, points: &Points) -> Result<Vec<f64>> {
        if points.dim() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: points.dim(),
            });
        }
        Ok(blocked::values(self, points))
    }

    /// `L V̂` at one point (the right-hand side is identically zero).
    pub fn pde_residual(&self, prob: &BsProblem, point: &[f64]) -> Result<f64> {
        self.check_point(point)?;
        let pts = Points::from_flat(self.input_dim(), point.to_vec())?;
        Ok(self.pde_residuals(prob, &pts)?[0])
    }

    pub fn pde_residuals(&self, prob: &BsProblem, points: &Points) -> Result<Vec<f64>> {
        self.check_problem(prob)?;
        if points.dim() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: points.dim(),
            });
        }
        Ok(blocked::residuals(self, &OpBlocks::new(prob, points)))
    }
}

pub(crate) const MAX_DIM: usize = 8;

/// Training set paired with its targets and operator data, reusable
/// across loss evaluations.
pub struct PreparedSet {
    d: usize,
    interior: OpBlocks,
    terminal: Points,
    terminal_target: Vec<f64>,
    boundary: Points,
    boundary_target: Vec<f64>,
    /// terminal then boundary points, for the gradient pass
    data: DataBlocks,
}

impl PreparedSet {
    pub fn new(prob: &BsProblem, ts: &TrainingSet) -> Result<Self> {
        if ts.interior.is_empty() {
            return Err(Error::EmptyPartition("interior"));
        }
        if ts.terminal.is_empty() {
            return Err(Error::EmptyPartition("terminal"));
        }
        if ts.boundary.is_empty() {
            return Err(Error::EmptyPartition("boundary"));
        }
        for pts in [&ts.interior, &ts.terminal, &ts.boundary] {
            if pts.dim() != prob.input_dim() {
                return Err(Error::DimensionMismatch {
                    expected: prob.input_dim(),
                    got: pts.dim(),
                });
            }
        }
        let terminal_target = ts
            .terminal
            .rows()
            .map(|p| prob.payoff_unchecked(&p[..prob.d]))
            .collect();
        let boundary_target = ts
            .boundary
            .rows()
            .map(|p| prob.boundary_value(p))
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedSet {
            d: prob.d,
            interior: OpBlocks::new(prob, &ts.interior),
            data: DataBlocks::new(prob.input_dim(), &[&ts.terminal, &ts.boundary]),
            terminal: ts.terminal.clone(),
            terminal_target,
            boundary: ts.boundary.clone(),
            boundary_target,
        })
    }

    fn check(&self, net: &RbfNetwork) -> Result<()> {
        if net.d != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: net.d,
            });
        }
        Ok(())
    }

    /// Residuals of the three partitions.
    fn residual_vectors(&self, net: &RbfNetwork) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let pde = blocked::residuals(net, &self.interior);
        let mut term = blocked::values(net, &self.terminal);
        for (v, t) in term.iter_mut().zip(&self.terminal_target) {
            *v -= t;
        }
        let mut bnd = blocked::values(net, &self.boundary);
        for (v, t) in bnd.iter_mut().zip(&self.boundary_target) {
            *v -= t;
        }
        (pde, term, bnd)
    }

    pub fn loss(&self, net: &RbfNetwork) -> Result<LossBreakdown> {
        self.check(net)?;
        let (pde, term, bnd) = self.residual_vectors(net);
        Ok(LossBreakdown::new(mean_sq(&pde), mean_sq(&term), mean_sq(&bnd)))
    }

    pub fn loss_and_gradient(&self, net: &RbfNetwork) -> Result<(LossBreakdown, ParamVector)> {
        self.check(net)?;
        let (pde, term, bnd) = self.residual_vectors(net);
        let breakdown = LossBreakdown::new(mean_sq(&pde), mean_sq(&term), mean_sq(&bnd));
        let scale = |v: &[f64]| {
            let k = 2.0 / v.len() as f64;
            v.iter().map(|x| k * x).collect::<Vec<f64>>()
        };
        let e_int = scale(&pde);
        let mut e_data = scale(&term);
        e_data.extend(scale(&bnd));
        let grad = blocked::gradient(net, &self.interior, &e_int, &self.data, &e_data);
        Ok((breakdown, ParamVector(grad)))
    }
}

fn mean_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64
}

pub fn loss(net: &RbfNetwork, prob: &BsProblem, ts: &TrainingSet) -> Result<LossBreakdown> {
    net.check_problem(prob)?;
    PreparedSet::new(prob, ts)?.loss(net)
}

pub fn loss_gradient(net: &RbfNetwork, prob: &BsProblem, ts: &TrainingSet) -> Result<ParamVector> {
    net.check_problem(prob)?;
    Ok(PreparedSet::new(prob, ts)?.loss_and_gradient(net)?.1)
}

/// How initial shape parameters are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "value")]
pub enum ShapeInit {
    /// Scalar `U[0,1)` draws for one asset; the midpoint-peaked formula otherwise.
    Default,
    /// Every shape component set to the given value.
    Constant(f64),
}

/// Per-dimension shape at coordinate `x` on `[0, edge]`: `1/sqrt((edge − x)³ + x³)`.
pub fn shape_from_position(x: f64, edge: f64) -> f64 {
    1.0 / ((edge - x).powi(3) + x.powi(3)).sqrt()
}

/// Seeded draws for shapes and output weights; persists across neuron insertions.
#[derive(Debug, Clone)]
pub struct Initializer {
    pub shape_init: ShapeInit,
    shapes: RngStream,
    weights: RngStream,
}

impl Initializer {
    pub fn new(seed: u64, shape_init: ShapeInit) -> Self {
        Initializer {
            shape_init,
            shapes: RngStream::new(seed, StreamLabel::Shapes),
            weights: RngStream::new(seed, StreamLabel::Weights),
        }
    }

    pub fn positions(&self) -> (u64, u64) {
        (self.shapes.position(), self.weights.position())
    }

    pub fn set_positions(&mut self, shapes: u64, weights: u64) {
        self.shapes.set_position(shapes);
        self.weights.set_position(weights);
    }

    /// Shape parameters for new neurons centred at `centres`.
    pub fn shapes_for(&mut self, prob: &BsProblem, centres: &Points) -> Vec<f64> {
        let mode = ShapeMode::for_dim(prob.d);
        let mut out = Vec::new();
        for c in centres.rows() {
            match (self.shape_init, mode) {
                (ShapeInit::Constant(v), ShapeMode::Scalar) => out.push(v),
                (ShapeInit::Constant(v), ShapeMode::PerDimension) => out.extend(std::iter::repeat_n(v, prob.d + 1)),
                (ShapeInit::Default, ShapeMode::Scalar) => out.push(self.shapes.uniform()),
                (ShapeInit::Default, ShapeMode::PerDimension) => {
                    for &s in &c[..prob.d] {
                        out.push(shape_from_position(s, prob.s_max));
                    }
                    out.push(shape_from_position(c[prob.d], prob.t_max));
                }
            }
        }
        out
    }

    /// `count` Xavier-uniform draws with bound `sqrt(6 / (fan_in + 1))`.
    pub fn xavier(&mut self, count: usize, fan_in: usize) -> Vec<f64> {
        let b = (6.0 / (fan_in as f64 + 1.0)).sqrt();
        (0..count).map(|_| self.weights.uniform_range(-b, b)).collect()
    }

    /// Network with the given centres, fresh shapes and Xavier weights + bias.
    pub fn init_with_centres(&mut self, prob: &BsProblem, kind: KernelKind, centres: &Points) -> Result<RbfNetwork> {
        let n = centres.len();
        if n == 0 {
            return Err(Error::InvalidConfig("network needs at least one neuron".into()));
        }
        if centres.dim() != prob.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: prob.input_dim(),
                got: centres.dim(),
            });
        }
        let shapes = self.shapes_for(prob, centres);
        let mut w = self.xavier(n + 1, n);
        let bias = w.pop().expect("n + 1 draws");
        RbfNetwork::new(
            prob.d,
            kind,
            ShapeMode::for_dim(prob.d),
            centres.as_flat().to_vec(),
            shapes,
            w,
            bias,
        )
    }
}

/// Seeded network: centres uniform over `[0, s_max]^d × [0, T]`.
pub fn init_network(prob: &BsProblem, n: usize, kind: KernelKind, seed: u64) -> Result<RbfNetwork> {
    if n == 0 {
        return Err(Error::InvalidConfig("network needs at least one neuron".into()));
    }
    let mut sampler = PointSampler::PseudoRandom(RngStream::new(seed, StreamLabel::Centres));
    let centres = sampler.closed_box(prob, n);
    Initializer::new(seed, ShapeInit::Default).init_with_centres(prob, kind, &centres)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::bs_put_exact;
    use crate::problems::{make_basket_4d, make_exchange_2d, make_put_1d};
    use crate::sampling::{build_training_set, PointSampler};

    fn one_neuron(kind: KernelKind, w: f64, bias: f64) -> RbfNetwork {
        RbfNetwork::new(1, kind, ShapeMode::Scalar, vec![5.0, 0.2], vec![0.7], vec![w], bias).unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let net = one_neuron(KernelKind::Gaussian, 0.0, 3.5);
        assert_eq!(net.evaluate(&[12.0, 0.4]).unwrap(), 3.5);
        let net = one_neuron(KernelKind::Gaussian, 2.0, 0.0);
        assert_eq!(net.evaluate(&[5.0, 0.2]).unwrap(), 2.0);

        let net = RbfNetwork::new(
            1,
            KernelKind::Gaussian,
            ShapeMode::Scalar,
            vec![0.0, 0.0, 1.0, 1.0],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
            0.0,
        )
        .unwrap();
        // distance² from (0,0) to (1,1) is 2
        let v = net.evaluate(&[0.0, 0.0]).unwrap();
        assert!((v - (1.0 + (-2.0f64).exp())).abs() < 1e-15);
        assert!(net.evaluate(&[0.0]).is_err());
    }

    #[test]
    fn param_counts() {
        let prob = make_put_1d();
        let net = init_network(&prob, 1200, KernelKind::Gaussian, 1).unwrap();
        assert_eq!(net.flatten().len(), 4801);
        let prob4 = make_basket_4d();
        let net = init_network(&prob4, 10, KernelKind::Gaussian, 1).unwrap();
        assert_eq!(net.flatten().len(), 111);
        assert_eq!(net.param_count(), 111);
    }

    #[test]
    fn flatten_roundtrip_and_length_check() {
        let prob = make_exchange_2d();
        let net = init_network(&prob, 7, KernelKind::InverseQuadratic, 3).unwrap();
        let back = net.unflatten(&net.flatten()).unwrap();
        assert_eq!(back, net);
        let mut short = net.flatten();
        short.0.pop();
        assert!(net.unflatten(&short).is_err());
    }

    #[test]
    fn constant_network_residual() {
        let prob = make_put_1d();
        let net = one_neuron(KernelKind::Gaussian, 0.0, 2.5);
        let res = net.pde_residual(&prob, &[11.0, 0.3]).unwrap();
        assert!((res + 0.05 * 2.5).abs() < 1e-15);
    }

    #[test]
    fn put_oracle_satisfies_operator_by_finite_differences() {
        let prob = make_put_1d();
        let v = |s: f64, t: f64| bs_put_exact(s, t, 10.0, 0.05, 0.2, 0.5).unwrap();
        let (s, t, h) = (15.0, 0.25, 1e-4);
        let vt = (v(s, t + h) - v(s, t - h)) / (2.0 * h);
        let vs = (v(s + h, t) - v(s - h, t)) / (2.0 * h);
        let vss = (v(s + h, t) - 2.0 * v(s, t) + v(s - h, t)) / (h * h);
        let res = prob
            .apply_operator(&[s, t], v(s, t), vt, &[vs], &[vec![vss]])
            .unwrap();
        assert!(res.abs() <= 1e-4, "{res}");
    }

    /// Residual by finite differences of `evaluate`, independent of the analytic path.
    fn fd_residual(net: &RbfNetwork, prob: &BsProblem, x: &[f64]) -> f64 {
        let d = prob.d;
        let h = 1e-4;
        let f = |y: &[f64]| net.evaluate(y).unwrap();
        let shifted = |i: usize, a: f64, j: usize, b: f64| {
            let mut y = x.to_vec();
            y[i] += a;
            y[j] += b;
            f(&y)
        };
        let v = f(x);
        let vt = (shifted(d, h, d, 0.0) - shifted(d, -h, d, 0.0)) / (2.0 * h);
        let grad: Vec<f64> = (0..d)
            .map(|i| (shifted(i, h, i, 0.0) - shifted(i, -h, i, 0.0)) / (2.0 * h))
            .collect();
        let hess: Vec<Vec<f64>> = (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| {
                        if i == j {
                            (shifted(i, h, i, 0.0) - 2.0 * v + shifted(i, -h, i, 0.0)) / (h * h)
                        } else {
                            (shifted(i, h, j, h) - shifted(i, h, j, -h) - shifted(i, -h, j, h) + shifted(i, -h, j, -h))
                                / (4.0 * h * h)
                        }
                    })
                    .collect()
            })
            .collect();
        prob.apply_operator(x, v, vt, &grad, &hess).unwrap()
    }

    #[test]
    fn analytic_residual_matches_finite_differences() {
        for (prob, seed) in [(make_put_1d(), 1), (make_exchange_2d(), 2), (make_basket_4d(), 3)] {
            for kind in KernelKind::ALL {
                let net = init_network(&prob, 6, kind, seed).unwrap();
                let mut rng = RngStream::new(seed, StreamLabel::TestPoints);
                let pts = PointSampler::PseudoRandom(RngStream::new(seed, StreamLabel::Candidates)).interior(&prob, 5);
                let _ = rng.uniform();
                for x in pts.rows() {
                    let a = net.pde_residual(&prob, x).unwrap();
                    let b = fd_residual(&net, &prob, x);
                    assert!((a - b).abs() <= 1e-5 * a.abs().max(1.0), "{kind} d={} {a} vs {b}", prob.d);
                }
            }
        }
    }

    #[test]
    fn zero_network_loss_is_mean_square_of_data() {
        let prob = make_put_1d();
        let ts = build_training_set(
            &prob,
            40,
            30,
            20,
            PointSampler::PseudoRandom(RngStream::new(4, StreamLabel::TrainingPoints)),
        )
        .unwrap();
        let net = one_neuron(KernelKind::Gaussian, 0.0, 0.0);
        let l = loss(&net, &prob, &ts).unwrap();
        assert_eq!(l.pde, 0.0);
        let term: f64 = ts.terminal.rows().map(|p| (10.0 - p[0]).max(0.0).powi(2)).sum::<f64>() / 30.0;
        let bnd: f64 = ts.boundary.rows().map(|p| prob.boundary_value(p).unwrap().powi(2)).sum::<f64>() / 20.0;
        assert!((l.terminal - term).abs() < 1e-12);
        assert!((l.boundary - bnd).abs() < 1e-12);
        assert_eq!(l.total, l.pde + l.terminal + l.boundary);

        let g = loss_gradient(&net, &prob, &ts).unwrap();
        let expect: f64 = ts.terminal.rows().map(|p| -(10.0 - p[0]).max(0.0)).sum::<f64>() * 2.0 / 30.0
            + ts.boundary.rows().map(|p| -prob.boundary_value(p).unwrap()).sum::<f64>() * 2.0 / 20.0;
        assert!((g.0.last().unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn duplicated_points_reweight_the_mean() {
        let prob = make_exchange_2d();
        let mk = |n| {
            build_training_set(
                &prob,
                n,
                n,
                n,
                PointSampler::PseudoRandom(RngStream::new(8, StreamLabel::TrainingPoints)),
            )
            .unwrap()
        };
        let ts = mk(12);
        let mut doubled = ts.clone();
        doubled.interior.extend(&ts.interior).unwrap();
        doubled.terminal.extend(&ts.terminal).unwrap();
        doubled.boundary.extend(&ts.boundary).unwrap();
        let net = init_network(&prob, 5, KernelKind::Gaussian, 2).unwrap();
        let a = loss(&net, &prob, &ts).unwrap();
        let b = loss(&net, &prob, &doubled).unwrap();
        assert!((a.total - b.total).abs() <= 1e-12 * a.total);
    }

    #[test]
    fn empty_partition_is_an_error() {
        let prob = make_put_1d();
        let ts = TrainingSet {
            interior: Points::new(2),
            terminal: Points::from_rows(2, &[vec![1.0, 0.5]]).unwrap(),
            boundary: Points::from_rows(2, &[vec![0.0, 0.1]]).unwrap(),
        };
        let net = one_neuron(KernelKind::Gaussian, 1.0, 0.0);
        assert!(matches!(loss(&net, &prob, &ts), Err(Error::EmptyPartition("interior"))));
    }

    #[test]
    fn dead_neuron_has_zero_weight_gradient() {
        let prob = make_put_1d();
        let ts = build_training_set(
            &prob,
            30,
            10,
            10,
            PointSampler::PseudoRandom(RngStream::new(4, StreamLabel::TrainingPoints)),
        )
        .unwrap();
        let net = RbfNetwork::new(
            1,
            KernelKind::Gaussian,
            ShapeMode::Scalar,
            vec![5.0, 0.2, 1e4, 0.2],
            vec![0.5, 1.0],
            vec![1.0, 0.3],
            0.1,
        )
        .unwrap();
        let g = loss_gradient(&net, &prob, &ts).unwrap();
        let n = 2;
        let w_off = n * 2 + n;
        assert!(g.0[w_off + 1].abs() <= 1e-300);
    }

    #[test]
    fn init_shapes_follow_position_formula() {
        assert!((shape_from_position(20.0, 40.0) - 7.9057e-3).abs() < 1e-7);
        assert!((shape_from_position(0.0, 40.0) - 3.9528e-3).abs() < 1e-7);
        let ratio = shape_from_position(0.0, 40.0) / shape_from_position(20.0, 40.0);
        assert!((ratio - 0.5).abs() < 1e-14);

        let prob = make_exchange_2d();
        let net = init_network(&prob, 20, KernelKind::Gaussian, 5).unwrap();
        for n in 0..20 {
            let c = net.centre(n);
            let sh = &net.shapes()[n * 3..n * 3 + 3];
            assert_eq!(sh[0], shape_from_position(c[0], 40.0));
            assert_eq!(sh[1], shape_from_position(c[1], 40.0));
            assert_eq!(sh[2], shape_from_position(c[2], 1.0));
        }
        let b = (6.0f64 / 21.0).sqrt();
        assert!(net.weights().iter().all(|w| w.abs() < b));
        assert!(net.bias().abs() < b);
    }

    #[test]
    fn init_is_deterministic_and_scalar_for_one_asset() {
        let prob = make_put_1d();
        let a = init_network(&prob, 50, KernelKind::Gaussian, 9).unwrap();
        let b = init_network(&prob, 50, KernelKind::Gaussian, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape_mode(), ShapeMode::Scalar);
        assert!(a.shapes().iter().all(|&c| (0.0..1.0).contains(&c)));
        for n in 0..50 {
            let c = a.centre(n);
            assert!(c[0] >= 0.0 && c[0] <= 30.0 && c[1] >= 0.0 && c[1] <= 0.5);
        }
        assert!(init_network(&prob, 0, KernelKind::Gaussian, 9).is_err());
    }

    #[test]
    fn permutation_invariance() {
        let prob = make_exchange_2d();
        let net = init_network(&prob, 9, KernelKind::InverseMultiquadric, 4).unwrap();
        let perm: Vec<usize> = (0..9).rev().collect();
        let p = net.permuted(&perm).unwrap();
        for x in [[3.0, 7.0, 0.1], [20.0, 31.0, 0.9]] {
            let a = net.evaluate(&x).unwrap();
            let b = p.evaluate(&x).unwrap();
            assert!((a - b).abs() <= 1e-13 * a.abs().max(1.0));
            let ra = net.pde_residual(&prob, &x).unwrap();
            let rb = p.pde_residual(&prob, &x).unwrap();
            assert!((ra - rb).abs() <= 1e-12 * ra.abs().max(1.0));
        }
    }

    #[test]
    fn zero_weight_neuron_changes_nothing() {
        let prob = make_put_1d();
        let net = init_network(&prob, 5, KernelKind::Gaussian, 4).unwrap();
        let bigger = net.with_appended(&[12.0, 0.3], &[0.4], &[0.0]).unwrap();
        for x in [[3.0, 0.1], [12.0, 0.3], [25.0, 0.45]] {
            assert_eq!(net.evaluate(&x).unwrap(), bigger.evaluate(&x).unwrap());
            assert_eq!(net.pde_residual(&prob, &x).unwrap(), bigger.pde_residual(&prob, &x).unwrap());
        }
    }

    #[test]
    fn residual_is_linear_in_output_layer() {
        let prob = make_exchange_2d();
        let a = init_network(&prob, 6, KernelKind::Gaussian, 1).unwrap();
        let mut b = a.clone();
        for (i, w) in b.weights_mut().iter_mut().enumerate() {
            *w = (i as f64 - 2.5) * 0.3;
        }
        let b = RbfNetwork::new(2, a.kind(), a.shape_mode(), a.centres().to_vec(), a.shapes().to_vec(), b.weights().to_vec(), -0.7).unwrap();
        let (ca, cb) = (1.7, -0.4);
        let w: Vec<f64> = a.weights().iter().zip(b.weights()).map(|(x, y)| ca * x + cb * y).collect();
        let combo = RbfNetwork::new(2, a.kind(), a.shape_mode(), a.centres().to_vec(), a.shapes().to_vec(), w, ca * a.bias() + cb * b.bias()).unwrap();
        let x = [13.0, 22.0, 0.4];
        let lhs = combo.pde_residual(&prob, &x).unwrap();
        let rhs = ca * a.pde_residual(&prob, &x).unwrap() + cb * b.pde_residual(&prob, &x).unwrap();
        assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
    }
}

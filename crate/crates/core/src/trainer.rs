//! Fixed-size and adaptive training loops.
//!
//! The adaptive loop takes one optimizer step per iteration, scores a fresh
//! batch of candidate points by their PDE residual, tracks the moving
//! average of the candidate MSE (MAPR-w), and every `k` iterations grows
//! the hidden layer at the `m` worst candidates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelKind;
use crate::network::{Initializer, LossBreakdown, PreparedSet, RbfNetwork, ShapeInit};
use crate::optimizer::{lbfgs_run, LbfgsConfig, OptState};
use crate::oracle::rmse;
use crate::problems::BsProblem;
use crate::sampling::{HaltonCursor, PointSampler, Points, RngStream, SourceKind, StreamLabel, TrainingSet};

/// Consecutive sub-`STAGNATION_TOL` loss changes that end a fixed-size run.
pub const STAGNATION_WINDOW: usize = 10;
pub const STAGNATION_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptiveConfig {
    pub n0: usize,
    pub k: usize,
    pub m: usize,
    pub s: usize,
    pub w: usize,
    pub epsilon: f64,
    pub max_iters: usize,
    pub source: SourceKind,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig {
            n0: 650,
            k: 100,
            m: 50,
            s: 1000,
            w: 128,
            epsilon: 1e-6,
            max_iters: 5000,
            source: SourceKind::PseudoRandom,
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n0 == 0 {
            return bad("adaptive.n0: must be at least 1".into());
        }
        if self.k == 0 {
            return bad("adaptive.k: must be at least 1".into());
        }
        if self.s == 0 {
            return bad("adaptive.s: must be at least 1".into());
        }
        if self.m > self.s {
            return bad(format!("adaptive.m: {} exceeds the candidate count s = {}", self.m, self.s));
        }
        if self.w < 2 {
            return bad(format!("adaptive.w: must be at least 2, got {}", self.w));
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("adaptive.epsilon: must be positive, got {}", self.epsilon));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The MAPR-w stopping rule fired.
    Converged,
    /// The loss stopped changing.
    Stagnation,
    IterationCap,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::Converged => "converged",
            StopReason::Stagnation => "stagnation",
            StopReason::IterationCap => "iteration_cap",
        }
    }
}

/// State at the end of one iteration. Losses and test RMSE describe the
/// network after the optimizer step; `neurons` counts any neurons inserted
/// at this iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loss: LossBreakdown,
    pub candidate_mse: Option<f64>,
    pub mapr: Option<f64>,
    pub neurons: usize,
    pub test_rmse: Option<f64>,
    pub evals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsertionEvent {
    pub iteration: usize,
    /// Row-major, one row per inserted neuron.
    pub centres: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub records: Vec<IterationRecord>,
    pub insertions: Vec<InsertionEvent>,
    pub stop_reason: StopReason,
}

impl RunHistory {
    fn new() -> Self {
        RunHistory {
            records: Vec::new(),
            insertions: Vec::new(),
            stop_reason: StopReason::IterationCap,
        }
    }

    pub fn last(&self) -> &IterationRecord {
        self.records.last().expect("history always holds the initial record")
    }

    /// Outer iterations performed.
    pub fn iterations(&self) -> usize {
        self.last().iteration
    }

    pub fn candidate_mses(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.candidate_mse).collect()
    }

    /// Iteration at which the run can be called converged.
    ///
    /// A run stopped by the MAPR-w rule converged where it stopped. Otherwise
    /// this is the first iteration from which the test RMSE (or the total
    /// loss, without test points) stays within 10% of its final value.
    pub fn iterations_to_converge(&self) -> usize {
        if self.stop_reason == StopReason::Converged {
            return self.iterations();
        }
        let metric: Vec<f64> = if self.records.iter().all(|r| r.test_rmse.is_some()) {
            self.records.iter().map(|r| r.test_rmse.unwrap()).collect()
        } else {
            self.records.iter().map(|r| r.loss.total).collect()
        };
        let last = *metric.last().unwrap();
        let mut idx = metric.len() - 1;
        while idx > 0 && (metric[idx - 1] - last).abs() <= 0.1 * last.abs() {
            idx -= 1;
        }
        self.records[idx].iteration
    }
}

/// Mean of the last `min(w, len)` entries.
pub fn mapr(residual_mses: &[f64], w: usize) -> f64 {
    assert!(!residual_mses.is_empty(), "mapr needs at least one entry");
    let take = w.max(1).min(residual_mses.len());
    let tail = &residual_mses[residual_mses.len() - take..];
    tail.iter().sum::<f64>() / take as f64
}

/// MAPR-w rose and the loss moved by less than `epsilon` over the last iteration.
pub fn should_stop(history: &RunHistory, w: usize, epsilon: f64) -> bool {
    let mses = history.candidate_mses();
    let n = history.records.len();
    if mses.len() < 2 || n < 2 {
        return false;
    }
    let d_mapr = mapr(&mses, w) - mapr(&mses[..mses.len() - 1], w);
    let d_loss = history.records[n - 1].loss.total - history.records[n - 2].loss.total;
    d_mapr > 0.0 && d_loss.abs() < epsilon
}

/// Reference prices at fixed test points.
#[derive(Debug, Clone)]
pub struct TestSet {
    pub points: Points,
    pub reference: Vec<f64>,
}

impl TestSet {
    pub fn new(points: Points, reference: Vec<f64>) -> Result<Self> {
        if points.len() != reference.len() {
            return Err(Error::LengthMismatch {
                expected: points.len(),
                got: reference.len(),
            });
        }
        Ok(TestSet { points, reference })
    }

    /// Test set priced by the problem's closed form.
    pub fn closed_form(prob: &BsProblem, points: Points) -> Result<Self> {
        let reference = points
            .rows()
            .map(|p| {
                prob.exact_price(p)
                    .ok_or_else(|| Error::InvalidProblem("no closed-form price for this problem".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        TestSet::new(points, reference)
    }

    pub fn rmse(&self, net: &RbfNetwork) -> Result<f64> {
        rmse(&net.evaluate_many(&self.points)?, &self.reference)
    }
}

/// Random sources that persist through a run and across a checkpoint.
#[derive(Debug, Clone)]
pub struct RunStreams {
    pub init: Initializer,
    pub candidates: PointSampler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamPositions {
    pub shapes: u64,
    pub weights: u64,
    pub candidate_source: SourceKind,
    pub candidates: u64,
}

impl RunStreams {
    /// With a Halton source the same cursor places the initial centres and
    /// then continues into the candidate points.
    pub fn new(seed: u64, shape_init: ShapeInit, source: SourceKind, halton_skip: usize, dims: usize) -> Result<Self> {
        let candidates = match source {
            SourceKind::PseudoRandom => PointSampler::PseudoRandom(RngStream::new(seed, StreamLabel::Candidates)),
            SourceKind::Halton => PointSampler::Halton(HaltonCursor::new(dims, halton_skip)?),
        };
        Ok(RunStreams {
            init: Initializer::new(seed, shape_init),
            candidates,
        })
    }

    pub fn positions(&self) -> StreamPositions {
        let (shapes, weights) = self.init.positions();
        StreamPositions {
            shapes,
            weights,
            candidate_source: self.candidates.kind(),
            candidates: self.candidates.position(),
        }
    }

    pub fn restore(seed: u64, shape_init: ShapeInit, dims: usize, pos: &StreamPositions) -> Result<Self> {
        let mut streams = RunStreams::new(seed, shape_init, pos.candidate_source, 0, dims)?;
        streams.init.set_positions(pos.shapes, pos.weights);
        streams.candidates.set_position(pos.candidates);
        Ok(streams)
    }
}

/// Initial network and the streams that continue from it.
///
/// When both sources are Halton, one cursor places the initial centres and
/// then continues into the candidate points.
#[allow(clippy::too_many_arguments)]
pub fn init_run(
    prob: &BsProblem,
    n0: usize,
    kind: KernelKind,
    seed: u64,
    shape_init: ShapeInit,
    centre_source: SourceKind,
    candidate_source: SourceKind,
    halton_skip: usize,
) -> Result<(RbfNetwork, RunStreams)> {
    if n0 == 0 {
        return Err(Error::InvalidConfig("network needs at least one neuron".into()));
    }
    let mut streams = RunStreams::new(seed, shape_init, candidate_source, halton_skip, prob.input_dim())?;
    let centres = match (centre_source, candidate_source) {
        (SourceKind::PseudoRandom, _) => {
            PointSampler::PseudoRandom(RngStream::new(seed, StreamLabel::Centres)).closed_box(prob, n0)
        }
        (SourceKind::Halton, SourceKind::Halton) => streams.candidates.closed_box(prob, n0),
        (SourceKind::Halton, SourceKind::PseudoRandom) => {
            PointSampler::Halton(HaltonCursor::new(prob.input_dim(), halton_skip)?).closed_box(prob, n0)
        }
    };
    let net = streams.init.init_with_centres(prob, kind, &centres)?;
    Ok((net, streams))
}

/// Appends `m` neurons at the candidates with the largest squared residuals.
pub fn insert_neurons(
    net: &RbfNetwork,
    prob: &BsProblem,
    candidates: &Points,
    residuals: &[f64],
    m: usize,
    init: &mut Initializer,
) -> Result<RbfNetwork> {
    if candidates.len() != residuals.len() {
        return Err(Error::LengthMismatch {
            expected: candidates.len(),
            got: residuals.len(),
        });
    }
    if m > candidates.len() {
        return Err(Error::InvalidConfig(format!(
            "cannot insert {m} neurons from {} candidates",
            candidates.len()
        )));
    }
    if m == 0 {
        return Ok(net.clone());
    }
    let mut order: Vec<usize> = (0..residuals.len()).collect();
    // stable sort keeps the lower index first among equal residuals
    order.sort_by(|&a, &b| (residuals[b] * residuals[b]).total_cmp(&(residuals[a] * residuals[a])));
    let mut centres = Points::new(candidates.dim());
    for &i in &order[..m] {
        centres.push(candidates.row(i))?;
    }
    let shapes = init.shapes_for(prob, &centres);
    let weights = init.xavier(m, net.n_neurons() + m);
    net.with_appended(centres.as_flat(), &shapes, &weights)
}

/// Objective over flat parameters that remembers the loss split of every point it saw.
struct Evaluator<'a> {
    template: RbfNetwork,
    prep: &'a PreparedSet,
    seen: Vec<(Vec<f64>, LossBreakdown)>,
}

impl<'a> Evaluator<'a> {
    fn new(template: RbfNetwork, prep: &'a PreparedSet) -> Self {
        Evaluator {
            template,
            prep,
            seen: Vec::new(),
        }
    }

    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let net = self.template.unflatten_slice(x)?;
        let (b, g) = self.prep.loss_and_gradient(&net)?;
        self.seen.push((x.to_vec(), b));
        Ok((b.total, g.0))
    }

    fn start(&mut self, net: &RbfNetwork) -> Result<(OptState, LossBreakdown)> {
        self.template = net.clone();
        let (b, g) = self.prep.loss_and_gradient(net)?;
        Ok((OptState::from_evaluated(net.flatten().0, b.total, g.0)?, b))
    }

    /// One optimizer step; returns the new network, its loss split and the evaluation count.
    fn step(
        &mut self,
        state: &mut OptState,
        current: LossBreakdown,
        cfg: &LbfgsConfig,
    ) -> Result<(RbfNetwork, LossBreakdown, usize)> {
        self.seen.clear();
        let rep = {
            let mut obj = |x: &[f64]| self.eval(x);
            lbfgs_run(state, &mut obj, cfg)?
        };
        let breakdown = if rep.moved {
            self.seen
                .iter()
                .rev()
                .find(|(x, _)| x.as_slice() == state.params())
                .map(|(_, b)| *b)
                .expect("accepted point was evaluated")
        } else {
            current
        };
        let net = self.template.unflatten_slice(state.params())?;
        Ok((net, breakdown, rep.evals))
    }
}

fn test_rmse(test: Option<&TestSet>, net: &RbfNetwork) -> Result<Option<f64>> {
    test.map(|t| t.rmse(net)).transpose()
}

/// Trains a fixed-size network until the loss stagnates or `max_iters`.
pub fn train_fixed(
    net: &RbfNetwork,
    prob: &BsProblem,
    ts: &TrainingSet,
    lbfgs: &LbfgsConfig,
    max_iters: usize,
    test: Option<&TestSet>,
    observer: &mut dyn FnMut(&IterationRecord),
) -> Result<(RbfNetwork, RunHistory)> {
    lbfgs.validate()?;
    check_dims(net, prob)?;
    let prep = PreparedSet::new(prob, ts)?;
    let mut ev = Evaluator::new(net.clone(), &prep);
    let (mut state, mut breakdown) = ev.start(net)?;
    let mut history = RunHistory::new();
    let first = IterationRecord {
        iteration: 0,
        loss: breakdown,
        candidate_mse: None,
        mapr: None,
        neurons: net.n_neurons(),
        test_rmse: test_rmse(test, net)?,
        evals: 1,
    };
    observer(&first);
    history.records.push(first);
    let mut current = net.clone();
    let mut flat = 0;
    for it in 1..=max_iters {
        let (next, b, evals) = ev.step(&mut state, breakdown, lbfgs)?;
        flat = if (b.total - breakdown.total).abs() < STAGNATION_TOL {
            flat + 1
        } else {
            0
        };
        current = next;
        breakdown = b;
        let rec = IterationRecord {
            iteration: it,
            loss: b,
            candidate_mse: None,
            mapr: None,
            neurons: current.n_neurons(),
            test_rmse: test_rmse(test, &current)?,
            evals,
        };
        observer(&rec);
        history.records.push(rec);
        if flat >= STAGNATION_WINDOW {
            history.stop_reason = StopReason::Stagnation;
            return Ok((current, history));
        }
    }
    history.stop_reason = StopReason::IterationCap;
    Ok((current, history))
}

fn check_dims(net: &RbfNetwork, prob: &BsProblem) -> Result<()> {
    if net.d() != prob.d {
        return Err(Error::DimensionMismatch {
            expected: prob.d,
            got: net.d(),
        });
    }
    Ok(())
}

/// Adaptive training from `net`, drawing candidates and new-neuron
/// parameters from `streams`.
///
/// Stopping checks start once more than `w` iterations of this run have
/// elapsed, so the moving average covers a full window.
#[allow(clippy::too_many_arguments)]
pub fn train_adaptive(
    net: &RbfNetwork,
    prob: &BsProblem,
    ts: &TrainingSet,
    acfg: &AdaptiveConfig,
    lbfgs: &LbfgsConfig,
    streams: &mut RunStreams,
    test: Option<&TestSet>,
    observer: &mut dyn FnMut(&IterationRecord),
) -> Result<(RbfNetwork, RunHistory)> {
    acfg.validate()?;
    lbfgs.validate()?;
    check_dims(net, prob)?;
    let prep = PreparedSet::new(prob, ts)?;
    let mut ev = Evaluator::new(net.clone(), &prep);
    let (mut state, mut breakdown) = ev.start(net)?;
    let mut history = RunHistory::new();
    let first = IterationRecord {
        iteration: 0,
        loss: breakdown,
        candidate_mse: None,
        mapr: None,
        neurons: net.n_neurons(),
        test_rmse: test_rmse(test, net)?,
        evals: 1,
    };
    observer(&first);
    history.records.push(first);
    let mut mses: Vec<f64> = Vec::new();
    let mut current = net.clone();

    for it in 1..=acfg.max_iters {
        let (next, b, evals) = ev.step(&mut state, breakdown, lbfgs)?;
        current = next;
        breakdown = b;

        let candidates = streams.candidates.interior(prob, acfg.s);
        let residuals = current.pde_residuals(prob, &candidates)?;
        let mse = residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64;
        mses.push(mse);
        let rec = IterationRecord {
            iteration: it,
            loss: b,
            candidate_mse: Some(mse),
            mapr: Some(mapr(&mses, acfg.w)),
            neurons: current.n_neurons(),
            test_rmse: test_rmse(test, &current)?,
            evals,
        };
        history.records.push(rec);

        if it > acfg.w && should_stop(&history, acfg.w, acfg.epsilon) {
            observer(history.last());
            history.stop_reason = StopReason::Converged;
            return Ok((current, history));
        }
        if it % acfg.k == 0 && acfg.m > 0 {
            let grown = insert_neurons(&current, prob, &candidates, &residuals, acfg.m, &mut streams.init)?;
            let dim = grown.input_dim();
            let added = grown.centres()[current.centres().len()..]
                .chunks_exact(dim)
                .map(|c| c.to_vec())
                .collect();
            history.insertions.push(InsertionEvent {
                iteration: it,
                centres: added,
            });
            current = grown;
            (state, breakdown) = ev.start(&current)?;
            history.records.last_mut().unwrap().neurons = current.n_neurons();
        }
        observer(history.last());
    }
    history.stop_reason = StopReason::IterationCap;
    Ok((current, history))
}

/// Continues adaptive training of a saved network against `new_prob`.
/// The insertion schedule restarts at iteration 0.
#[allow(clippy::too_many_arguments)]
pub fn fine_tune(
    net: &RbfNetwork,
    new_prob: &BsProblem,
    ts: &TrainingSet,
    acfg: &AdaptiveConfig,
    lbfgs: &LbfgsConfig,
    streams: &mut RunStreams,
    test: Option<&TestSet>,
    observer: &mut dyn FnMut(&IterationRecord),
) -> Result<(RbfNetwork, RunHistory)> {
    check_dims(net, new_prob)?;
    train_adaptive(net, new_prob, ts, acfg, lbfgs, streams, test, observer)
}

//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::f64::consts::PI;

use pirbf::network::{ParamVector, PreparedSet, RbfNetwork, ShapeMode};
use pirbf::problems::BsProblem;
use pirbf::sampling::{build_training_set, PointSampler, RngStream, StreamLabel};

pub fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

/// Adaptive Simpson with Richardson correction over a uniform pre-split.
pub fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(a, m, fa, flm, fm);
        let right = simpson(m, b, fm, frm, fb);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * tol {
            return left + right + diff / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    // start from pieces narrower than the integrand's features
    let pieces = 128;
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|i| {
            let (lo, hi) = (a + i as f64 * h, a + (i + 1) as f64 * h);
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            rec(f, lo, hi, fa, fm, fb, simpson(lo, hi, fa, fm, fb), tol / pieces as f64, 50)
        })
        .sum()
}

pub fn density(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Discounted expected put payoff under lognormal terminal prices.
pub fn put_by_quadrature(s: f64, tau: f64, k: f64, r: f64, sigma: f64) -> f64 {
    let drift = (r - 0.5 * sigma * sigma) * tau;
    let vol = sigma * tau.sqrt();
    let z_star = ((k / s).ln() - drift) / vol;
    let f = |z: f64| (k - s * (drift + vol * z).exp()).max(0.0) * density(z);
    (-r * tau).exp() * adaptive(&f, z_star - 40.0, z_star, 1e-14)
}

pub fn setup(prob: &BsProblem, seed: u64) -> PreparedSet {
    let sampler = PointSampler::PseudoRandom(RngStream::new(seed, StreamLabel::TrainingPoints));
    let ts = build_training_set(prob, 25, 12, 16, sampler).unwrap();
    PreparedSet::new(prob, &ts).unwrap()
}

/// Same centres and output layer, shapes chosen so every kernel overlaps
/// the sampled points in both coordinates.
pub fn with_mode(net: &RbfNetwork, prob: &BsProblem, mode: ShapeMode) -> RbfNetwork {
    let dim = net.input_dim();
    let shapes: Vec<f64> = match mode {
        ShapeMode::Scalar => (0..net.n_neurons())
            .map(|n| (1.0 + 0.4 * n as f64) / prob.s_max)
            .collect(),
        ShapeMode::PerDimension => (0..net.n_neurons())
            .flat_map(|n| {
                (0..dim).map(move |i| {
                    let span = if i + 1 == dim { prob.t_max } else { prob.s_max };
                    (0.8 + 0.3 * ((n + i) % 4) as f64) / span
                })
            })
            .collect(),
    };
    RbfNetwork::new(
        net.d(),
        net.kind(),
        mode,
        net.centres().to_vec(),
        shapes,
        net.weights().to_vec(),
        net.bias(),
    )
    .unwrap()
}

pub fn rebuild(net: &RbfNetwork, p: &[f64]) -> RbfNetwork {
    net.unflatten(&ParamVector(p.to_vec())).unwrap()
}

/// Relative ℓ∞ error of the analytic loss gradient against central differences.
pub fn gradient_error(net: &RbfNetwork, prep: &PreparedSet) -> f64 {
    let (_, g) = prep.loss_and_gradient(net).unwrap();
    let p0 = net.flatten().0;
    let mut worst = 0.0f64;
    let mut gmax = 0.0f64;
    for i in 0..p0.len() {
        let h = 1e-6 * p0[i].abs().max(1.0);
        let mut p = p0.clone();
        p[i] = p0[i] + h;
        let up = prep.loss(&rebuild(net, &p)).unwrap().total;
        p[i] = p0[i] - h;
        let dn = prep.loss(&rebuild(net, &p)).unwrap().total;
        let fd = (up - dn) / (2.0 * h);
        worst = worst.max((fd - g.0[i]).abs());
        gmax = gmax.max(fd.abs());
    }
    worst / gmax.max(1e-12)
}


/// `L V` by central differences for any spatial dimension, `h` relative to
/// each coordinate's scale.
pub fn operator_by_differences(prob: &BsProblem, v: &dyn Fn(&[f64]) -> f64, pt: &[f64], h: f64) -> f64 {
    let d = prob.d;
    let c = prob.operator_coeffs(pt).unwrap();
    let shifted = |moves: &[(usize, f64)]| {
        let mut p = pt.to_vec();
        for &(i, dx) in moves {
            p[i] += dx;
        }
        v(&p)
    };
    let f0 = v(pt);
    let mut lv = (shifted(&[(d, h)]) - shifted(&[(d, -h)])) / (2.0 * h) + c.zeroth * f0;
    for i in 0..d {
        let first = (shifted(&[(i, h)]) - shifted(&[(i, -h)])) / (2.0 * h);
        let second = (shifted(&[(i, h)]) - 2.0 * f0 + shifted(&[(i, -h)])) / (h * h);
        lv += c.first[i] * first + c.second[i][i] * second;
        for j in 0..i {
            let cross = (shifted(&[(i, h), (j, h)]) - shifted(&[(i, h), (j, -h)]) - shifted(&[(i, -h), (j, h)])
                + shifted(&[(i, -h), (j, -h)]))
                / (4.0 * h * h);
            lv += (c.second[i][j] + c.second[j][i]) * cross;
        }
    }
    lv
}

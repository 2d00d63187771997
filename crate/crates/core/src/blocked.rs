//! Blocked loops behind network values, residuals and the loss gradient.
//!
//! Neurons (or, in the per-neuron gradient pass, points) are packed in
//! groups of [`LANES`] with one accumulator per lane, and lanes are reduced
//! in a fixed order. On x86-64 the same loop bodies are also compiled for
//! AVX2 and AVX-512 and picked at run time; every build rounds identically
//! since no operations are fused.

use rayon::prelude::*;

use crate::kernels::{Gaussian, InverseMultiquadric, InverseQuadratic, KernelKind, Rbf};
use crate::network::{RbfNetwork, ShapeMode};
use crate::problems::BsProblem;
use crate::sampling::Points;

pub(crate) const LANES: usize = 8;
type Lane = [f64; LANES];

#[inline(always)]
fn lane(blk: &[f64], field: usize) -> &Lane {
    blk[field * LANES..(field + 1) * LANES].try_into().expect("block width")
}

#[inline(always)]
fn hsum(a: &Lane) -> f64 {
    ((a[0] + a[1]) + (a[2] + a[3])) + ((a[4] + a[5]) + (a[6] + a[7]))
}

/// Runs `$f::<S, K>` for the network's kernel and spatial dimension.
macro_rules! dispatch {
    ($kind:expr, $d:expr, $f:ident($($arg:expr),*)) => {
        match $kind {
            KernelKind::Gaussian => dispatch!(@dim $d, Gaussian, $f($($arg),*)),
            KernelKind::InverseQuadratic => dispatch!(@dim $d, InverseQuadratic, $f($($arg),*)),
            KernelKind::InverseMultiquadric => dispatch!(@dim $d, InverseMultiquadric, $f($($arg),*)),
        }
    };
    (@dim $d:expr, $k:ty, $f:ident($($arg:expr),*)) => {
        match $d {
            1 => $f::<1, $k>($($arg),*),
            2 => $f::<2, $k>($($arg),*),
            3 => $f::<3, $k>($($arg),*),
            4 => $f::<4, $k>($($arg),*),
            5 => $f::<5, $k>($($arg),*),
            6 => $f::<6, $k>($($arg),*),
            7 => $f::<7, $k>($($arg),*),
            8 => $f::<8, $k>($($arg),*),
            _ => unreachable!("dimension validated at construction"),
        }
    };
}

/// Instruction set the loop bodies run on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Isa {
    Portable,
    #[allow(dead_code)]
    Avx2,
    #[allow(dead_code)]
    Avx512,
}

impl Isa {
    fn detect() -> Isa {
        #[cfg(target_arch = "x86_64")]
        {
            if std::is_x86_feature_detected!("avx512f") {
                return Isa::Avx512;
            }
            if std::is_x86_feature_detected!("avx2") {
                return Isa::Avx2;
            }
        }
        Isa::Portable
    }
}

/// Neuron parameters as lane blocks `[c (S), cₜ, q (S), qₜ, w]` with `q = C²`.
/// Padding neurons have zero weight.
fn neuron_blocks(net: &RbfNetwork) -> Vec<f64> {
    let dim = net.input_dim();
    let width = (2 * dim + 1) * LANES;
    let n = net.n_neurons();
    let mut out = vec![0.0; n.div_ceil(LANES) * width];
    for k in 0..n {
        let blk = &mut out[(k / LANES) * width..][..width];
        let l = k % LANES;
        for (i, &c) in net.centre(k).iter().enumerate() {
            blk[i * LANES + l] = c;
        }
        for i in 0..dim {
            let s = match net.shape_mode() {
                ShapeMode::Scalar => net.shapes()[k],
                ShapeMode::PerDimension => net.shapes()[k * dim + i],
            };
            blk[(dim + i) * LANES + l] = s * s;
        }
        blk[2 * dim * LANES + l] = net.weights()[k];
    }
    out
}

/// One neuron unpacked, shapes squared.
#[derive(Clone, Copy)]
struct Neuron<const S: usize> {
    c: [f64; S],
    ct: f64,
    q: [f64; S],
    qt: f64,
    w: f64,
}

fn neurons<const S: usize>(net: &RbfNetwork) -> Vec<Neuron<S>> {
    let dim = S + 1;
    (0..net.n_neurons())
        .map(|n| {
            let cen = net.centre(n);
            let mut c = [0.0; S];
            c.copy_from_slice(&cen[..S]);
            let mut q = [0.0; S];
            let qt = match net.shape_mode() {
                ShapeMode::Scalar => {
                    let v = net.shapes()[n] * net.shapes()[n];
                    q = [v; S];
                    v
                }
                ShapeMode::PerDimension => {
                    let sh = &net.shapes()[n * dim..(n + 1) * dim];
                    for i in 0..S {
                        q[i] = sh[i] * sh[i];
                    }
                    sh[S] * sh[S]
                }
            };
            Neuron {
                c,
                ct: cen[S],
                q,
                qt,
                w: net.weights()[n],
            }
        })
        .collect()
}

/// Points as lane blocks of `fields` values each, built by `fill`. Padding
/// slots repeat the first point so every lane stays finite.
fn point_blocks(n: usize, fields: usize, mut fill: impl FnMut(usize, &mut dyn FnMut(usize, f64))) -> Vec<f64> {
    let width = fields * LANES;
    let nb = n.div_ceil(LANES);
    let mut data = vec![0.0; nb * width];
    for j in 0..nb * LANES {
        let blk = &mut data[(j / LANES) * width..][..width];
        let l = j % LANES;
        fill(if j < n { j } else { 0 }, &mut |f, v| blk[f * LANES + l] = v);
    }
    data
}

/// Pads per-point weights to whole blocks with zeros.
fn padded(e: &[f64]) -> Vec<f64> {
    let mut v = e.to_vec();
    v.resize(e.len().div_ceil(LANES) * LANES, 0.0);
    v
}

/// Interior points with their operator coefficients, lane blocks
/// `[S (d), t, σS (d), rS (d), (σS)² (d)]`.
pub(crate) struct OpBlocks {
    d: usize,
    len: usize,
    r: f64,
    rho: Vec<f64>,
    data: Vec<f64>,
}

impl OpBlocks {
    pub(crate) fn new(prob: &BsProblem, points: &Points) -> Self {
        let d = prob.d;
        let data = point_blocks(points.len(), 4 * d + 1, |j, put| {
            let p = points.row(j);
            for (i, &x) in p.iter().enumerate() {
                put(i, x);
            }
            for i in 0..d {
                let s = prob.sigma[i] * p[i];
                put(d + 1 + i, s);
                put(2 * d + 1 + i, prob.r * p[i]);
                put(3 * d + 1 + i, s * s);
            }
        });
        OpBlocks {
            d,
            len: points.len(),
            r: prob.r,
            rho: prob.rho.iter().flatten().copied().collect(),
            data,
        }
    }

    fn rho<const S: usize>(&self) -> [[f64; S]; S] {
        let mut m = [[0.0; S]; S];
        for (i, row) in m.iter_mut().enumerate() {
            row.copy_from_slice(&self.rho[i * S..(i + 1) * S]);
        }
        m
    }

    fn point<const S: usize>(&self, j: usize) -> OpPoint<S> {
        let width = (4 * S + 1) * LANES;
        let blk = &self.data[(j / LANES) * width..][..width];
        let l = j % LANES;
        let at = |f: usize| blk[f * LANES + l];
        OpPoint {
            x: std::array::from_fn(|i| at(i)),
            t: at(S),
            sig: std::array::from_fn(|i| at(S + 1 + i)),
            rs: std::array::from_fn(|i| at(2 * S + 1 + i)),
            sig2: std::array::from_fn(|i| at(3 * S + 1 + i)),
        }
    }
}

/// Plain points as lane blocks `[S (d), t]`.
pub(crate) struct DataBlocks {
    len: usize,
    data: Vec<f64>,
}

impl DataBlocks {
    /// Concatenates `sets` in order.
    pub(crate) fn new(dim: usize, sets: &[&Points]) -> Self {
        let rows: Vec<&[f64]> = sets.iter().flat_map(|p| p.rows()).collect();
        let data = point_blocks(rows.len(), dim, |j, put| {
            for (i, &x) in rows[j].iter().enumerate() {
                put(i, x);
            }
        });
        DataBlocks { len: rows.len(), data }
    }
}

#[derive(Clone, Copy)]
struct OpPoint<const S: usize> {
    x: [f64; S],
    t: f64,
    sig: [f64; S],
    rs: [f64; S],
    sig2: [f64; S],
}

#[inline(always)]
fn value_at<const S: usize, K: Rbf>(nb: &[f64], x: &[f64; S], t: f64) -> f64 {
    let mut acc = [0.0; LANES];
    for blk in nb.chunks_exact((2 * S + 3) * LANES) {
        let (ct, qt, w) = (lane(blk, S), lane(blk, 2 * S + 1), lane(blk, 2 * S + 2));
        let mut u = [0.0; LANES];
        for l in 0..LANES {
            let dt = t - ct[l];
            u[l] = qt[l] * dt * dt;
        }
        for i in 0..S {
            let (c, q) = (lane(blk, i), lane(blk, S + 1 + i));
            for l in 0..LANES {
                let dx = x[i] - c[l];
                u[l] += q[l] * dx * dx;
            }
        }
        for l in 0..LANES {
            acc[l] += w[l] * K::d0(u[l]);
        }
    }
    hsum(&acc)
}

/// `Σ wₙ L φₙ` at one point.
#[inline(always)]
fn residual_at<const S: usize, K: Rbf>(nb: &[f64], pt: &OpPoint<S>, rho2: &[[f64; S]; S], r: f64) -> f64 {
    let mut acc = [0.0; LANES];
    for blk in nb.chunks_exact((2 * S + 3) * LANES) {
        let (ct, qt, w) = (lane(blk, S), lane(blk, 2 * S + 1), lane(blk, 2 * S + 2));
        let mut u = [0.0; LANES];
        let mut p = [0.0; LANES];
        let mut y = [[0.0; LANES]; S];
        for l in 0..LANES {
            let dt = pt.t - ct[l];
            u[l] = qt[l] * dt * dt;
            p[l] = 2.0 * qt[l] * dt;
        }
        for i in 0..S {
            let (c, q) = (lane(blk, i), lane(blk, S + 1 + i));
            for l in 0..LANES {
                let dx = pt.x[i] - c[l];
                u[l] += q[l] * dx * dx;
                let g = 2.0 * q[l] * dx;
                y[i][l] = pt.sig[i] * g;
                p[l] += pt.rs[i] * g + q[l] * pt.sig2[i];
            }
        }
        // yᵀρy using symmetry, rho2 holds 2ρ
        let mut qq = [0.0; LANES];
        for i in 0..S {
            for l in 0..LANES {
                qq[l] += y[i][l] * y[i][l];
            }
            for j in 0..i {
                for l in 0..LANES {
                    qq[l] += rho2[i][j] * y[i][l] * y[j][l];
                }
            }
        }
        for l in 0..LANES {
            let [f0, f1, f2] = K::d2(u[l]);
            acc[l] += w[l] * (f1 * p[l] + f2 * (0.5 * qq[l]) - r * f0);
        }
    }
    hsum(&acc)
}

/// Derivatives of `Σ e·residual` with respect to `δ = x − c` and `q = C²`
/// of one neuron, and to its weight.
#[derive(Clone, Copy)]
struct NeuronGrad<const S: usize> {
    dc: [f64; S],
    dct: f64,
    dq: [f64; S],
    dqt: f64,
    dw: f64,
}

#[inline(always)]
fn neuron_grad<const S: usize, K: Rbf>(
    nr: &Neuron<S>,
    ops: &[f64],
    e_int: &[f64],
    rho: &[[f64; S]; S],
    r: f64,
    data: &[f64],
    e_data: &[f64],
) -> NeuronGrad<S> {
    let mut dc = [[0.0; LANES]; S];
    let mut dq = [[0.0; LANES]; S];
    let mut dct = [0.0; LANES];
    let mut dqt = [0.0; LANES];
    let mut dw = [0.0; LANES];

    for (blk, e) in ops.chunks_exact((4 * S + 1) * LANES).zip(e_int.chunks_exact(LANES)) {
        let t = lane(blk, S);
        let mut dt = [0.0; LANES];
        let mut u = [0.0; LANES];
        let mut p = [0.0; LANES];
        let mut delta = [[0.0; LANES]; S];
        let mut y = [[0.0; LANES]; S];
        for l in 0..LANES {
            dt[l] = t[l] - nr.ct;
            u[l] = nr.qt * dt[l] * dt[l];
            p[l] = 2.0 * nr.qt * dt[l];
        }
        for i in 0..S {
            let (x, sig, rs, sig2) = (
                lane(blk, i),
                lane(blk, S + 1 + i),
                lane(blk, 2 * S + 1 + i),
                lane(blk, 3 * S + 1 + i),
            );
            for l in 0..LANES {
                let dx = x[l] - nr.c[i];
                delta[i][l] = dx;
                u[l] += nr.q[i] * dx * dx;
                let g = 2.0 * nr.q[i] * dx;
                y[i][l] = sig[l] * g;
                p[l] += rs[l] * g + nr.q[i] * sig2[l];
            }
        }
        // (A g)ᵢ = ½ σᵢSᵢ (ρ y)ᵢ
        let mut qq = [0.0; LANES];
        let mut ag = [[0.0; LANES]; S];
        for i in 0..S {
            let sig = lane(blk, S + 1 + i);
            let mut z = [0.0; LANES];
            for j in 0..S {
                for l in 0..LANES {
                    z[l] += rho[i][j] * y[j][l];
                }
            }
            for l in 0..LANES {
                qq[l] += y[i][l] * z[l];
                ag[i][l] = 0.5 * sig[l] * z[l];
            }
        }
        let mut f1 = [0.0; LANES];
        let mut f2 = [0.0; LANES];
        let mut big_f = [0.0; LANES];
        for l in 0..LANES {
            let [g0, g1, g2, g3] = K::d3(u[l]);
            let q = 0.5 * qq[l];
            let ew = e[l];
            dw[l] += ew * (g1 * p[l] + g2 * q - r * g0);
            big_f[l] = g2 * p[l] + g3 * q - r * g1;
            f1[l] = g1;
            f2[l] = g2;
            dct[l] += ew * (big_f[l] * 2.0 * nr.qt * dt[l] + 2.0 * g1 * nr.qt);
            dqt[l] += ew * (big_f[l] * dt[l] * dt[l] + 2.0 * g1 * dt[l]);
        }
        for k in 0..S {
            let (rs, sig2) = (lane(blk, 2 * S + 1 + k), lane(blk, 3 * S + 1 + k));
            for l in 0..LANES {
                let dk = delta[k][l];
                let g = 2.0 * nr.q[k] * dk;
                let d_delta = big_f[l] * g + 2.0 * nr.q[k] * (f1[l] * rs[l] + 2.0 * f2[l] * ag[k][l]);
                let d_q = big_f[l] * dk * dk + f1[l] * (2.0 * dk * rs[l] + sig2[l]) + 4.0 * f2[l] * dk * ag[k][l];
                dc[k][l] += e[l] * d_delta;
                dq[k][l] += e[l] * d_q;
            }
        }
    }

    for (blk, e) in data.chunks_exact((S + 1) * LANES).zip(e_data.chunks_exact(LANES)) {
        let t = lane(blk, S);
        let mut dt = [0.0; LANES];
        let mut u = [0.0; LANES];
        let mut delta = [[0.0; LANES]; S];
        for l in 0..LANES {
            dt[l] = t[l] - nr.ct;
            u[l] = nr.qt * dt[l] * dt[l];
        }
        for i in 0..S {
            let x = lane(blk, i);
            for l in 0..LANES {
                let dx = x[l] - nr.c[i];
                delta[i][l] = dx;
                u[l] += nr.q[i] * dx * dx;
            }
        }
        let mut ef1 = [0.0; LANES];
        for l in 0..LANES {
            let [f0, f1, _] = K::d2(u[l]);
            dw[l] += e[l] * f0;
            ef1[l] = e[l] * f1;
            dct[l] += ef1[l] * 2.0 * nr.qt * dt[l];
            dqt[l] += ef1[l] * dt[l] * dt[l];
        }
        for k in 0..S {
            for l in 0..LANES {
                let dk = delta[k][l];
                dc[k][l] += ef1[l] * 2.0 * nr.q[k] * dk;
                dq[k][l] += ef1[l] * dk * dk;
            }
        }
    }

    NeuronGrad {
        dc: std::array::from_fn(|k| hsum(&dc[k])),
        dct: hsum(&dct),
        dq: std::array::from_fn(|k| hsum(&dq[k])),
        dqt: hsum(&dqt),
        dw: hsum(&dw),
    }
}

/// Wrappers compiling the loop bodies for one instruction set.
macro_rules! isa_module {
    ($name:ident, $feature:literal) => {
        #[cfg(target_arch = "x86_64")]
        mod $name {
            use super::*;

            #[target_feature(enable = $feature)]
            pub(super) unsafe fn value_at<const S: usize, K: Rbf>(nb: &[f64], x: &[f64; S], t: f64) -> f64 {
                super::value_at::<S, K>(nb, x, t)
            }

            #[target_feature(enable = $feature)]
            pub(super) unsafe fn residual_at<const S: usize, K: Rbf>(
                nb: &[f64],
                pt: &OpPoint<S>,
                rho2: &[[f64; S]; S],
                r: f64,
            ) -> f64 {
                super::residual_at::<S, K>(nb, pt, rho2, r)
            }

            #[target_feature(enable = $feature)]
            pub(super) unsafe fn neuron_grad<const S: usize, K: Rbf>(
                nr: &Neuron<S>,
                ops: &[f64],
                e_int: &[f64],
                rho: &[[f64; S]; S],
                r: f64,
                data: &[f64],
                e_data: &[f64],
            ) -> NeuronGrad<S> {
                super::neuron_grad::<S, K>(nr, ops, e_int, rho, r, data, e_data)
            }
        }
    };
}

isa_module!(avx2, "avx2");
isa_module!(avx512, "avx512f");

/// Calls `$f` from the module matching `$isa`.
macro_rules! on_isa {
    ($isa:expr, $f:ident::<$s:ident, $k:ident>($($arg:expr),*)) => {
        match $isa {
            // SAFETY: an Isa other than Portable is only produced after
            // run-time detection of the matching feature
            #[cfg(target_arch = "x86_64")]
            Isa::Avx512 => unsafe { avx512::$f::<$s, $k>($($arg),*) },
            #[cfg(target_arch = "x86_64")]
            Isa::Avx2 => unsafe { avx2::$f::<$s, $k>($($arg),*) },
            _ => $f::<$s, $k>($($arg),*),
        }
    };
}

fn values_impl<const S: usize, K: Rbf>(net: &RbfNetwork, points: &Points, isa: Isa) -> Vec<f64> {
    let nb = neuron_blocks(net);
    let bias = net.bias();
    points
        .as_flat()
        .par_chunks_exact(S + 1)
        .map(|row| {
            let x: [f64; S] = row[..S].try_into().expect("row width");
            bias + on_isa!(isa, value_at::<S, K>(&nb, &x, row[S]))
        })
        .collect()
}

fn residuals_impl<const S: usize, K: Rbf>(net: &RbfNetwork, ops: &OpBlocks, isa: Isa) -> Vec<f64> {
    let nb = neuron_blocks(net);
    let rho = ops.rho::<S>();
    let rho2: [[f64; S]; S] = std::array::from_fn(|i| std::array::from_fn(|j| 2.0 * rho[i][j]));
    let r = ops.r;
    let base = -r * net.bias();
    (0..ops.len)
        .into_par_iter()
        .map(|j| {
            let pt = ops.point::<S>(j);
            base + on_isa!(isa, residual_at::<S, K>(&nb, &pt, &rho2, r))
        })
        .collect()
}

fn gradient_impl<const S: usize, K: Rbf>(
    net: &RbfNetwork,
    ops: &OpBlocks,
    e_int: &[f64],
    data: &DataBlocks,
    e_data: &[f64],
    isa: Isa,
) -> Vec<f64> {
    let ns = neurons::<S>(net);
    let rho = ops.rho::<S>();
    let r = ops.r;
    let (pe_int, pe_data) = (padded(e_int), padded(e_data));

    let per_neuron: Vec<NeuronGrad<S>> = ns
        .par_iter()
        .map(|nr| on_isa!(isa, neuron_grad::<S, K>(nr, &ops.data, &pe_int, &rho, r, &data.data, &pe_data)))
        .collect();

    let n = ns.len();
    let dim = S + 1;
    let sc = net.shape_cols();
    let shapes = net.shapes();
    let mut grad = vec![0.0; net.param_count()];
    let (gc, rest) = grad.split_at_mut(n * dim);
    let (gs, rest) = rest.split_at_mut(n * sc);
    let (gw, gb) = rest.split_at_mut(n);
    for (idx, (acc, nr)) in per_neuron.iter().zip(&ns).enumerate() {
        // chain rule from δ = x − c and q = C²
        for k in 0..S {
            gc[idx * dim + k] = -nr.w * acc.dc[k];
        }
        gc[idx * dim + S] = -nr.w * acc.dct;
        match net.shape_mode() {
            ShapeMode::Scalar => {
                let total: f64 = acc.dq.iter().sum::<f64>() + acc.dqt;
                gs[idx] = 2.0 * shapes[idx] * nr.w * total;
            }
            ShapeMode::PerDimension => {
                for k in 0..S {
                    gs[idx * dim + k] = 2.0 * shapes[idx * dim + k] * nr.w * acc.dq[k];
                }
                gs[idx * dim + S] = 2.0 * shapes[idx * dim + S] * nr.w * acc.dqt;
            }
        }
        gw[idx] = acc.dw;
    }
    gb[0] = -r * e_int.iter().sum::<f64>() + e_data.iter().sum::<f64>();
    grad
}

/// Network output at every point.
pub(crate) fn values(net: &RbfNetwork, points: &Points) -> Vec<f64> {
    values_with(net, points, Isa::detect())
}

fn values_with(net: &RbfNetwork, points: &Points, isa: Isa) -> Vec<f64> {
    dispatch!(net.kind(), net.d(), values_impl(net, points, isa))
}

/// `L V̂` at every interior point.
pub(crate) fn residuals(net: &RbfNetwork, ops: &OpBlocks) -> Vec<f64> {
    residuals_with(net, ops, Isa::detect())
}

fn residuals_with(net: &RbfNetwork, ops: &OpBlocks, isa: Isa) -> Vec<f64> {
    debug_assert_eq!(ops.d, net.d());
    dispatch!(net.kind(), net.d(), residuals_impl(net, ops, isa))
}

/// Gradient of `Σ e_int·(L V̂) + Σ e_data·V̂` in flat parameter order.
pub(crate) fn gradient(net: &RbfNetwork, ops: &OpBlocks, e_int: &[f64], data: &DataBlocks, e_data: &[f64]) -> Vec<f64> {
    gradient_with(net, ops, e_int, data, e_data, Isa::detect())
}

fn gradient_with(
    net: &RbfNetwork,
    ops: &OpBlocks,
    e_int: &[f64],
    data: &DataBlocks,
    e_data: &[f64],
    isa: Isa,
) -> Vec<f64> {
    debug_assert_eq!(e_int.len(), ops.len);
    debug_assert_eq!(e_data.len(), data.len);
    dispatch!(net.kind(), net.d(), gradient_impl(net, ops, e_int, data, e_data, isa))
}

//! Seeded point generation.
//!
//! Every random draw in the crate goes through an [`RngStream`]: ChaCha8
//! keyed by the run seed, with the stream label selecting the ChaCha stream
//! id. Uniform variates are built from the top 53 bits of `next_u64`, so the
//! sequences are fixed by the ChaCha8 keystream alone.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::BsProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamLabel {
    Centres,
    TrainingPoints,
    Shapes,
    Weights,
    Candidates,
    TestPoints,
    MonteCarlo,
}

impl StreamLabel {
    fn id(self) -> u64 {
        match self {
            StreamLabel::Centres => 1,
            StreamLabel::TrainingPoints => 2,
            StreamLabel::Shapes => 3,
            StreamLabel::Weights => 4,
            StreamLabel::Candidates => 5,
            StreamLabel::TestPoints => 6,
            StreamLabel::MonteCarlo => 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    label: StreamLabel,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, label: StreamLabel) -> Self {
        Self::with_substream(seed, label, 0)
    }

    /// Independent substream `index` of a labelled stream (used for
    /// Monte-Carlo batches).
    pub fn with_substream(seed: u64, label: StreamLabel, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(label.id() | (index << 8));
        RngStream { seed, label, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> StreamLabel {
        self.label
    }

    /// Position in 32-bit words; restoring it resumes the sequence exactly.
    pub fn position(&self) -> u64 {
        self.rng.get_word_pos() as u64
    }

    pub fn set_position(&mut self, pos: u64) {
        self.rng.set_word_pos(pos as u128);
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        loop {
            let x = lo + (hi - lo) * self.uniform();
            if x < hi {
                return x;
            }
        }
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}

/// Row-major point cloud with a fixed dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Points {
    dim: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize) -> Self {
        Points { dim, data: Vec::new() }
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::LengthMismatch {
                expected: dim.max(1) * (data.len() / dim.max(1)),
                got: data.len(),
            });
        }
        Ok(Points { dim, data })
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let mut pts = Points::new(dim);
        for row in rows {
            pts.push(row)?;
        }
        Ok(pts)
    }

    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: row.len(),
            });
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn extend(&mut self, other: &Points) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        self.data.extend_from_slice(&other.data);
        Ok(())
    }
}

pub fn sample_uniform_box(n: usize, lo: &[f64], hi: &[f64], rng: &mut RngStream) -> Result<Points> {
    if lo.len() != hi.len() || lo.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: lo.len(),
            got: hi.len(),
        });
    }
    if lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
        return Err(Error::Domain(format!("degenerate box {lo:?} .. {hi:?}")));
    }
    let dim = lo.len();
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        for j in 0..dim {
            data.push(rng.uniform_range(lo[j], hi[j]));
        }
    }
    Ok(Points { dim, data })
}

pub const HALTON_MAX_DIMS: usize = 16;
const PRIMES: [u64; HALTON_MAX_DIMS] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Radical inverse of `k` in `base`, rounded once.
pub fn radical_inverse(mut k: u64, base: u64) -> f64 {
    let mut num: u64 = 0;
    let mut den: u64 = 1;
    while k > 0 {
        num = num * base + k % base;
        den *= base;
        k /= base;
    }
    num as f64 / den as f64
}

/// Points `skip + 1 ..= skip + n` of the Halton sequence in the unit cube.
pub fn halton(n: usize, dims: usize, skip: usize) -> Result<Points> {
    let mut cursor = HaltonCursor::new(dims, skip)?;
    let mut data = vec![0.0; n * dims];
    for row in data.chunks_exact_mut(dims.max(1)) {
        cursor.next_into(row);
    }
    Ok(Points { dim: dims, data })
}

/// Resumable position in a Halton sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HaltonCursor {
    dims: usize,
    index: u64,
}

impl HaltonCursor {
    pub fn new(dims: usize, skip: usize) -> Result<Self> {
        if dims == 0 || dims > HALTON_MAX_DIMS {
            return Err(Error::Domain(format!(
                "halton dimension must be in 1..={HALTON_MAX_DIMS}, got {dims}"
            )));
        }
        Ok(HaltonCursor {
            dims,
            index: skip as u64,
        })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn position(&self) -> u64 {
        self.index
    }

    pub fn set_position(&mut self, index: u64) {
        self.index = index;
    }

    pub fn next_into(&mut self, out: &mut [f64]) {
        self.index += 1;
        for (j, o) in out.iter_mut().enumerate().take(self.dims) {
            *o = radical_inverse(self.index, PRIMES[j]);
        }
    }
}

/// Where unit-cube points come from.
#[derive(Debug, Clone)]
pub enum PointSampler {
    PseudoRandom(RngStream),
    Halton(HaltonCursor),
}

impl PointSampler {
    /// One point in `[0, 1)^dim`. Halton samplers must be built with `dim` dimensions.
    pub fn unit_point(&mut self, out: &mut [f64]) {
        match self {
            PointSampler::PseudoRandom(rng) => {
                for o in out.iter_mut() {
                    *o = rng.uniform();
                }
            }
            PointSampler::Halton(c) => {
                debug_assert_eq!(c.dims(), out.len());
                c.next_into(out);
            }
        }
    }

    pub fn position(&self) -> u64 {
        match self {
            PointSampler::PseudoRandom(rng) => rng.position(),
            PointSampler::Halton(c) => c.position(),
        }
    }

    pub fn set_position(&mut self, pos: u64) {
        match self {
            PointSampler::PseudoRandom(rng) => rng.set_position(pos),
            PointSampler::Halton(c) => c.set_position(pos),
        }
    }

    pub fn kind(&self) -> SourceKind {
        match self {
            PointSampler::PseudoRandom(_) => SourceKind::PseudoRandom,
            PointSampler::Halton(_) => SourceKind::Halton,
        }
    }

    /// `n` points in the open space-time interior `(0, s_max)^d × (0, T)`.
    pub fn interior(&mut self, prob: &BsProblem, n: usize) -> Points {
        let dim = prob.input_dim();
        let mut pts = Points::new(dim);
        pts.data.reserve(n * dim);
        let mut u = vec![0.0; dim];
        while pts.len() < n {
            self.unit_point(&mut u);
            let row: Vec<f64> = u
                .iter()
                .enumerate()
                .map(|(j, &x)| x * if j < prob.d { prob.s_max } else { prob.t_max })
                .collect();
            let inside = row[..prob.d].iter().all(|&s| s > 0.0 && s < prob.s_max)
                && row[prob.d] > 0.0
                && row[prob.d] < prob.t_max;
            if inside {
                pts.data.extend_from_slice(&row);
            }
        }
        pts
    }

    /// `n` points in the closed box `[0, s_max]^d × [0, T]` (initial centres).
    pub fn closed_box(&mut self, prob: &BsProblem, n: usize) -> Points {
        let dim = prob.input_dim();
        let mut pts = Points::new(dim);
        let mut u = vec![0.0; dim];
        for _ in 0..n {
            self.unit_point(&mut u);
            for (j, &x) in u.iter().enumerate() {
                pts.data.push(x * if j < prob.d { prob.s_max } else { prob.t_max });
            }
        }
        pts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    PseudoRandom,
    Halton,
}

/// Interior, terminal and boundary collocation points.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub interior: Points,
    pub terminal: Points,
    pub boundary: Points,
}

impl TrainingSet {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.interior.len(), self.terminal.len(), self.boundary.len())
    }

    pub fn total(&self) -> usize {
        self.interior.len() + self.terminal.len() + self.boundary.len()
    }
}

/// Builds the partitioned set. Boundary points cycle through the `2d`
/// spatial faces (face `j` pins coordinate `j / 2` to `0` for even `j`,
/// `s_max` for odd `j`).
pub fn build_training_set(
    prob: &BsProblem,
    m_l: usize,
    m_t: usize,
    m_b: usize,
    mut source: PointSampler,
) -> Result<TrainingSet> {
    if m_l == 0 || m_t == 0 || m_b == 0 {
        return Err(Error::InvalidConfig(format!(
            "sampling: every partition needs at least one point, got ({m_l}, {m_t}, {m_b})"
        )));
    }
    let d = prob.d;
    let dim = d + 1;
    if let PointSampler::Halton(c) = &source {
        if c.dims() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: c.dims(),
            });
        }
    }
    let interior = source.interior(prob, m_l);

    let mut terminal = Points::new(dim);
    let mut u = vec![0.0; dim];
    while terminal.len() < m_t {
        source.unit_point(&mut u);
        let s: Vec<f64> = u[..d].iter().map(|x| x * prob.s_max).collect();
        if s.iter().all(|&x| x > 0.0) {
            terminal.data.extend_from_slice(&s);
            terminal.data.push(prob.t_max);
        }
    }

    let mut boundary = Points::new(dim);
    for i in 0..m_b {
        let face = i % (2 * d);
        source.unit_point(&mut u);
        let mut row: Vec<f64> = (0..dim)
            .map(|j| u[j] * if j < d { prob.s_max } else { prob.t_max })
            .collect();
        row[face / 2] = if face % 2 == 0 { 0.0 } else { prob.s_max };
        boundary.data.extend_from_slice(&row);
    }

    Ok(TrainingSet {
        interior,
        terminal,
        boundary,
    })
}

/// `n` test points in `(0, s_max)^d` at a fixed time.
pub fn sample_test_points(prob: &BsProblem, n: usize, time: f64, rng: &mut RngStream) -> Points {
    let dim = prob.input_dim();
    let mut pts = Points::new(dim);
    while pts.len() < n {
        let row: Vec<f64> = (0..prob.d)
            .map(|_| rng.uniform() * prob.s_max)
            .chain(std::iter::once(time))
            .collect();
        if row[..prob.d].iter().all(|&s| s > 0.0) {
            pts.data.extend_from_slice(&row);
        }
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_basket_4d, make_put_1d};

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let mut a = RngStream::new(42, StreamLabel::Centres);
        let mut b = RngStream::new(42, StreamLabel::Centres);
        let mut c = RngStream::new(42, StreamLabel::Weights);
        let xs: Vec<f64> = (0..8).map(|_| a.uniform()).collect();
        let ys: Vec<f64> = (0..8).map(|_| b.uniform()).collect();
        let zs: Vec<f64> = (0..8).map(|_| c.uniform()).collect();
        assert_eq!(xs, ys);
        assert_ne!(xs, zs);
    }

    #[test]
    fn stream_position_resumes() {
        let mut a = RngStream::new(3, StreamLabel::Candidates);
        for _ in 0..17 {
            a.uniform();
        }
        let pos = a.position();
        let expect: Vec<f64> = (0..5).map(|_| a.uniform()).collect();
        let mut b = RngStream::new(3, StreamLabel::Candidates);
        b.set_position(pos);
        let got: Vec<f64> = (0..5).map(|_| b.uniform()).collect();
        assert_eq!(expect, got);
    }

    #[test]
    fn uniform_box_contract() {
        let mut rng = RngStream::new(1, StreamLabel::TrainingPoints);
        assert!(sample_uniform_box(0, &[0.0], &[1.0], &mut rng).unwrap().is_empty());
        assert!(sample_uniform_box(3, &[1.0], &[1.0], &mut rng).is_err());
        let pts = sample_uniform_box(1000, &[-1.0, 2.0], &[1.0, 3.0], &mut rng).unwrap();
        for p in pts.rows() {
            assert!(p[0] >= -1.0 && p[0] < 1.0 && p[1] >= 2.0 && p[1] < 3.0);
        }
    }

    #[test]
    fn uniform_box_mean_is_within_clt_bound() {
        let mut rng = RngStream::new(99, StreamLabel::TrainingPoints);
        let n = 100_000;
        let pts = sample_uniform_box(n, &[0.0, 0.0], &[1.0, 1.0], &mut rng).unwrap();
        for j in 0..2 {
            let mean = pts.rows().map(|p| p[j]).sum::<f64>() / n as f64;
            assert!((mean - 0.5).abs() < 0.0027, "{mean}");
        }
    }

    #[test]
    fn halton_leading_points() {
        let h = halton(4, 2, 0).unwrap();
        assert_eq!(h.row(0), &[0.5, 1.0 / 3.0]);
        assert_eq!(h.row(1), &[0.25, 2.0 / 3.0]);
        assert_eq!(h.row(3)[0], 0.125);
        let skipped = halton(1, 2, 3).unwrap();
        assert_eq!(skipped.row(0), h.row(3));
        assert!(halton(1, 17, 0).is_err());
        assert!(halton(1, 0, 0).is_err());
    }

    /// Max over test boxes [0,a)×[0,b) of |empirical fraction − area|.
    fn box_discrepancy(pts: &Points, boxes: &[(f64, f64)]) -> f64 {
        let n = pts.len() as f64;
        boxes
            .iter()
            .map(|&(a, b)| {
                let inside = pts.rows().filter(|p| p[0] < a && p[1] < b).count() as f64;
                (inside / n - a * b).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn halton_beats_pseudo_random_discrepancy() {
        let n = 1024;
        let h = halton(n, 2, 0).unwrap();
        let mut box_rng = RngStream::new(5, StreamLabel::TestPoints);
        let trials = 50;
        let mut wins = 0;
        for trial in 0..trials {
            let boxes: Vec<(f64, f64)> = (0..64).map(|_| (box_rng.uniform(), box_rng.uniform())).collect();
            let mut rng = RngStream::with_substream(trial, StreamLabel::TrainingPoints, 1);
            let pr = sample_uniform_box(n, &[0.0, 0.0], &[1.0, 1.0], &mut rng).unwrap();
            if box_discrepancy(&h, &boxes) < box_discrepancy(&pr, &boxes) {
                wins += 1;
            }
        }
        assert!(wins as f64 >= 0.9 * trials as f64, "{wins}/{trials}");
    }

    fn check_invariants(prob: &BsProblem, ts: &TrainingSet) {
        for p in ts.terminal.rows() {
            assert_eq!(p[prob.d], prob.t_max);
        }
        for p in ts.interior.rows() {
            assert!(p[prob.d] > 0.0 && p[prob.d] < prob.t_max);
            assert!(p[..prob.d].iter().all(|&s| s > 0.0 && s < prob.s_max));
        }
        for p in ts.boundary.rows() {
            assert!(p[..prob.d].iter().any(|&s| s == 0.0 || s == prob.s_max));
            assert!(p[prob.d] >= 0.0 && p[prob.d] < prob.t_max);
        }
    }

    #[test]
    fn put_training_set_sizes_and_invariants() {
        let prob = make_put_1d();
        let src = PointSampler::PseudoRandom(RngStream::new(0, StreamLabel::TrainingPoints));
        let ts = build_training_set(&prob, 1600, 400, 800, src).unwrap();
        assert_eq!(ts.sizes(), (1600, 400, 800));
        assert_eq!(ts.total(), 2800);
        check_invariants(&prob, &ts);
        let zeros = ts.boundary.rows().filter(|p| p[0] == 0.0).count();
        assert_eq!(zeros, 400);
    }

    #[test]
    fn basket_boundary_round_robin() {
        let prob = make_basket_4d();
        let src = PointSampler::PseudoRandom(RngStream::new(0, StreamLabel::TrainingPoints));
        let ts = build_training_set(&prob, 6000, 700, 5600, src).unwrap();
        assert_eq!(ts.sizes(), (6000, 700, 5600));
        check_invariants(&prob, &ts);
        for face in 0..8 {
            let (dim, val) = (face / 2, if face % 2 == 0 { 0.0 } else { 4.0 });
            let count = ts
                .boundary
                .rows()
                .enumerate()
                .filter(|(i, p)| i % 8 == face && p[dim] == val)
                .count();
            assert_eq!(count, 700);
        }
    }

    #[test]
    fn halton_training_set_and_determinism() {
        let prob = make_put_1d();
        let src = || PointSampler::Halton(HaltonCursor::new(2, 0).unwrap());
        let a = build_training_set(&prob, 50, 10, 20, src()).unwrap();
        let b = build_training_set(&prob, 50, 10, 20, src()).unwrap();
        assert_eq!(a, b);
        check_invariants(&prob, &a);
        assert!(build_training_set(&prob, 0, 10, 20, src()).is_err());
    }
}

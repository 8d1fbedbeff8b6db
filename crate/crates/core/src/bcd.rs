//! Block coordinate descent on synthetic smooth objectives, used to check
//! the convergence-rate bound of neighborhood-wise training numerically.
//!
//! Everything is minimized; wrap a reward-like objective in [`Maximize`] to
//! flip its sign.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BcdError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite objective or gradient at iteration {iteration}")]
    NonFinite { iteration: usize, trace: Box<BcdTrace> },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub trait SmoothObjective: Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;

    /// Per-coordinate `(lower, upper)` bounds of the feasible box.
    fn bounds(&self) -> Option<&[(f64, f64)]> {
        None
    }

    /// Minimizer over the coordinates in `block` with the others held at
    /// `x`, when it has a closed form.
    fn block_minimize(&self, _x: &[f64], _block: &[usize]) -> Option<Vec<f64>> {
        None
    }
}

/// `0.5 x'Qx - b'x` with symmetric positive definite `Q`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    q: DMatrix<f64>,
    b: DVector<f64>,
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let m = DMatrix::from_fn(d, d, |_, _| gaussian(rng));
    let qr = m.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

impl Quadratic {
    pub fn new(q: DMatrix<f64>, b: DVector<f64>) -> Result<Self, BcdError> {
        if q.nrows() != q.ncols() || q.nrows() != b.len() {
            return Err(BcdError::Contract("Q must be square and match b".into()));
        }
        if (&q - q.transpose()).amax() > 1e-12 * q.amax().max(1.0) {
            return Err(BcdError::Contract("Q must be symmetric".into()));
        }
        if q.clone().cholesky().is_none() {
            return Err(BcdError::Contract("Q must be positive definite".into()));
        }
        Ok(Self { q, b })
    }

    /// Random SPD quadratic with condition number exactly `cond` whose
    /// eigenvectors are mostly aligned with the contiguous blocks of
    /// `n_blocks`, then mixed by the Cayley rotation of a random skew-symmetric
    /// matrix scaled by `coupling`. Eigenvalues are spaced
    /// geometrically on `[1, cond]` and assigned to blocks at random.
    pub fn coupled_spd<R: Rng + ?Sized>(d: usize, n_blocks: usize, cond: f64, coupling: f64, rng: &mut R) -> Self {
        assert!(d >= 1 && cond >= 1.0 && (1..=d).contains(&n_blocks));
        let mut u = DMatrix::zeros(d, d);
        for block in BlockPartition::contiguous(d, n_blocks).blocks() {
            let q = random_orthogonal(block.len(), rng);
            for (i, &r) in block.iter().enumerate() {
                for (j, &c) in block.iter().enumerate() {
                    u[(r, c)] = q[(i, j)];
                }
            }
        }
        let mut s = DMatrix::from_fn(d, d, |_, _| gaussian(rng));
        s = (&s - s.transpose()) * (0.5 * coupling / (d as f64).sqrt());
        // Cayley transform (I - S/2)^{-1} (I + S/2) is orthogonal for skew S
        let eye = DMatrix::<f64>::identity(d, d);
        let rot = (&eye - &s * 0.5)
            .lu()
            .solve(&(&eye + &s * 0.5))
            .expect("I - S/2 is invertible for skew S");
        let u = rot * u;
        let mut lambdas: Vec<f64> = (0..d)
            .map(|i| if d == 1 { 1.0 } else { cond.powf(i as f64 / (d - 1) as f64) })
            .collect();
        for i in (1..d).rev() {
            lambdas.swap(i, rng.random_range(0..=i));
        }
        let q = &u * DMatrix::from_diagonal(&DVector::from_vec(lambdas)) * u.transpose();
        let q = (&q + q.transpose()) * 0.5;
        let b = DVector::from_fn(d, |_, _| gaussian(rng));
        Self { q, b }
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    /// Largest eigenvalue, a Lipschitz constant of the gradient.
    pub fn lipschitz(&self) -> f64 {
        self.q.symmetric_eigenvalues().max()
    }

    pub fn condition_number(&self) -> f64 {
        let ev = self.q.symmetric_eigenvalues();
        ev.max() / ev.min()
    }
}

impl SmoothObjective for Quadratic {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x);
        0.5 * x.dot(&(&self.q * &x)) - self.b.dot(&x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let x = DVector::from_column_slice(x);
        (&self.q * x - &self.b).as_slice().to_vec()
    }

    fn block_minimize(&self, x: &[f64], block: &[usize]) -> Option<Vec<f64>> {
        let k = block.len();
        let qbb = DMatrix::from_fn(k, k, |i, j| self.q[(block[i], block[j])]);
        // rhs = b_B - Q_{B,rest} x_rest = b_B - (Q x)_B + Q_BB x_B
        let rhs = DVector::from_fn(k, |i, _| {
            let r = block[i];
            let full: f64 = (0..x.len()).map(|c| self.q[(r, c)] * x[c]).sum();
            let inner: f64 = block.iter().map(|&c| self.q[(r, c)] * x[c]).sum();
            self.b[r] - full + inner
        });
        let sol = qbb.cholesky()?.solve(&rhs);
        let mut out = x.to_vec();
        block.iter().zip(sol.iter()).for_each(|(&i, &v)| out[i] = v);
        Some(out)
    }
}

/// `sum_i (x_i - c_i)^2`
#[derive(Debug, Clone)]
pub struct Separable {
    pub center: Vec<f64>,
}

impl SmoothObjective for Separable {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.center).map(|(x, c)| (x - c).powi(2)).sum()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.center).map(|(x, c)| 2.0 * (x - c)).collect()
    }

    fn block_minimize(&self, x: &[f64], block: &[usize]) -> Option<Vec<f64>> {
        let mut out = x.to_vec();
        block.iter().for_each(|&i| out[i] = self.center[i]);
        Some(out)
    }
}

/// Non-convex chain: `sum_i cos(x_i) + coupling/2 * sum_i (x_{i+1} - x_i)^2
/// + ridge/2 * |x|^2`.
#[derive(Debug, Clone)]
pub struct SumOfCosines {
    pub d: usize,
    pub coupling: f64,
    pub ridge: f64,
}

impl SumOfCosines {
    pub fn lipschitz(&self) -> f64 {
        1.0 + 4.0 * self.coupling + self.ridge
    }
}

impl SmoothObjective for SumOfCosines {
    fn dim(&self) -> usize {
        self.d
    }

    fn value(&self, x: &[f64]) -> f64 {
        let cos: f64 = x.iter().map(|v| v.cos()).sum();
        let chain: f64 = x.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
        let ridge: f64 = x.iter().map(|v| v * v).sum();
        cos + 0.5 * self.coupling * chain + 0.5 * self.ridge * ridge
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g: Vec<f64> = x.iter().map(|v| -v.sin() + self.ridge * v).collect();
        for i in 0..x.len().saturating_sub(1) {
            let diff = self.coupling * (x[i + 1] - x[i]);
            g[i] -= diff;
            g[i + 1] += diff;
        }
        g
    }
}

/// Restricts an objective to a box.
#[derive(Debug, Clone)]
pub struct Boxed<O> {
    pub inner: O,
    bounds: Vec<(f64, f64)>,
}

impl<O: SmoothObjective> Boxed<O> {
    pub fn new(inner: O, bounds: Vec<(f64, f64)>) -> Result<Self, BcdError> {
        if bounds.len() != inner.dim() || bounds.iter().any(|(lo, hi)| !(lo <= hi)) {
            return Err(BcdError::Contract("bounds must give lo <= hi for every coordinate".into()));
        }
        Ok(Self { inner, bounds })
    }
}

impl<O: SmoothObjective> SmoothObjective for Boxed<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.inner.value(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.inner.gradient(x)
    }

    fn bounds(&self) -> Option<&[(f64, f64)]> {
        Some(&self.bounds)
    }
}

/// Turns maximization of `inner` into minimization of `-inner`.
#[derive(Debug, Clone)]
pub struct Maximize<O>(pub O);

impl<O: SmoothObjective> SmoothObjective for Maximize<O> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        -self.0.value(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.0.gradient(x).into_iter().map(|g| -g).collect()
    }

    fn bounds(&self) -> Option<&[(f64, f64)]> {
        self.0.bounds()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_feasible(obj: &dyn SmoothObjective, x: &[f64]) -> Result<(), BcdError> {
    if x.len() != obj.dim() {
        return Err(BcdError::Contract(format!("point has {} coordinates, objective {}", x.len(), obj.dim())));
    }
    if let Some(bounds) = obj.bounds() {
        if let Some(i) = (0..x.len()).find(|&i| !(bounds[i].0 <= x[i] && x[i] <= bounds[i].1)) {
            return Err(BcdError::Contract(format!("coordinate {i} = {} is outside {:?}", x[i], bounds[i])));
        }
    }
    Ok(())
}

fn projected_gradient_norm(obj: &dyn SmoothObjective, x: &[f64], g: &[f64]) -> f64 {
    match obj.bounds() {
        None => norm(g),
        Some(bounds) => g
            .iter()
            .zip(x)
            .zip(bounds)
            .map(|((&g, &x), &(lo, hi))| {
                // descent moves along -g; drop components blocked by an active bound
                if (x <= lo && g > 0.0) || (x >= hi && g < 0.0) {
                    0.0
                } else {
                    g * g
                }
            })
            .sum::<f64>()
            .sqrt(),
    }
}

/// Gradient norm, or projected-gradient norm on a box.
pub fn stationarity_gap(obj: &dyn SmoothObjective, x: &[f64]) -> Result<f64, BcdError> {
    check_feasible(obj, x)?;
    Ok(projected_gradient_norm(obj, x, &obj.gradient(x)))
}

/// A partition of `0..d` into blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPartition {
    blocks: Vec<Vec<usize>>,
}

impl BlockPartition {
    pub fn new(d: usize, blocks: Vec<Vec<usize>>) -> Result<Self, BcdError> {
        let mut seen = vec![false; d];
        for &i in blocks.iter().flatten() {
            if i >= d || std::mem::replace(&mut seen[i], true) {
                return Err(BcdError::Contract(format!("blocks do not partition 0..{d}")));
            }
        }
        if seen.iter().any(|s| !s) || blocks.iter().any(Vec::is_empty) {
            return Err(BcdError::Contract(format!("blocks do not partition 0..{d}")));
        }
        Ok(Self { blocks })
    }

    /// `k` contiguous blocks whose sizes differ by at most one.
    pub fn contiguous(d: usize, k: usize) -> Self {
        assert!((1..=d).contains(&k), "need 1 <= k <= d");
        let blocks = (0..k).map(|j| (j * d / k..(j + 1) * d / k).collect()).collect();
        Self { blocks }
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlockOrder {
    Cyclic,
    Random { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepBound {
    /// `w_k = scale / k`
    Harmonic { scale: f64 },
    Constant(f64),
}

impl StepBound {
    pub fn at(&self, k: usize) -> f64 {
        match *self {
            Self::Harmonic { scale } => scale / k as f64,
            Self::Constant(w) => w,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// Exact minimization over the block; `w_k` is the length of the step taken.
    Exact,
    /// Block gradient step `-lr * g_B`, shortened to length `w_k` when longer,
    /// then projected onto the box.
    Gradient { lr: f64, bound: StepBound },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BcdTrace {
    pub initial_point: Vec<f64>,
    pub initial_objective: f64,
    pub initial_gap: f64,
    /// Iterate after each block update.
    pub points: Vec<Vec<f64>>,
    pub blocks: Vec<usize>,
    pub weights: Vec<f64>,
    pub objective: Vec<f64>,
    pub gaps: Vec<f64>,
}

impl BcdTrace {
    pub fn len(&self) -> usize {
        self.gaps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaps.is_empty()
    }

    pub fn final_point(&self) -> &[f64] {
        self.points.last().unwrap_or(&self.initial_point)
    }
}

/// Runs `iterations` block updates from `x0`.
pub fn bcd_run(
    obj: &dyn SmoothObjective,
    partition: &BlockPartition,
    order: BlockOrder,
    rule: StepRule,
    x0: &[f64],
    iterations: usize,
) -> Result<BcdTrace, BcdError> {
    check_feasible(obj, x0)?;
    if partition.blocks().iter().flatten().any(|&i| i >= obj.dim()) {
        return Err(BcdError::Contract("partition does not match the objective dimension".into()));
    }
    if let StepRule::Gradient { lr, .. } = rule {
        if !(lr > 0.0) {
            return Err(BcdError::Contract("learning rate must be positive".into()));
        }
    }
    let mut rng = match order {
        BlockOrder::Random { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        BlockOrder::Cyclic => None,
    };
    let mut trace = BcdTrace {
        initial_point: x0.to_vec(),
        initial_objective: obj.value(x0),
        initial_gap: stationarity_gap(obj, x0)?,
        ..BcdTrace::default()
    };
    let mut x = x0.to_vec();
    for k in 1..=iterations {
        let block_id = match rng.as_mut() {
            Some(r) => r.random_range(0..partition.len()),
            None => (k - 1) % partition.len(),
        };
        let block = &partition.blocks()[block_id];
        let (next, w) = match rule {
            StepRule::Exact => {
                let next = obj.block_minimize(&x, block).ok_or_else(|| {
                    BcdError::Contract("objective has no closed-form block minimizer".into())
                })?;
                let step: Vec<f64> = block.iter().map(|&i| next[i] - x[i]).collect();
                (next, norm(&step))
            }
            StepRule::Gradient { lr, bound } => {
                let g = obj.gradient(&x);
                let w = bound.at(k);
                let mut step: Vec<f64> = block.iter().map(|&i| -lr * g[i]).collect();
                let len = norm(&step);
                if len > w {
                    step.iter_mut().for_each(|s| *s *= w / len);
                }
                let mut next = x.clone();
                for (&i, s) in block.iter().zip(&step) {
                    next[i] += s;
                    if let Some(bounds) = obj.bounds() {
                        next[i] = next[i].clamp(bounds[i].0, bounds[i].1);
                    }
                }
                (next, w)
            }
        };
        let value = obj.value(&next);
        let g = obj.gradient(&next);
        if !value.is_finite() || g.iter().any(|v| !v.is_finite()) || next.iter().any(|v| !v.is_finite()) {
            return Err(BcdError::NonFinite {
                iteration: k,
                trace: Box::new(trace),
            });
        }
        trace.gaps.push(projected_gradient_norm(obj, &next, &g));
        trace.objective.push(value);
        trace.weights.push(w);
        trace.blocks.push(block_id);
        trace.points.push(next.clone());
        x = next;
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateBound {
    /// Smallest `c` with `min_{k<=i} gap_k <= c / sum_{k<=i} w_k` for every `i`.
    pub c: f64,
    pub running_min: Vec<f64>,
    pub products: Vec<f64>,
    pub passed: bool,
}

/// Share of the trace treated as its tail when testing for divergence.
const TAIL_START: f64 = 0.75;
/// Allowed growth of the tail products over the head before calling them divergent.
const TAIL_SLACK: f64 = 1.01;

/// Fits the rate constant of `min gap <= c / sum w` and checks that
/// `running_min * sum w` stays bounded: it passes when `c` is finite and the
/// largest product in the last quarter of the trace does not exceed the
/// largest product before it (with 1% slack).
pub fn check_rate_bound(trace: &BcdTrace) -> Result<RateBound, BcdError> {
    if trace.is_empty() || trace.weights.len() != trace.gaps.len() {
        return Err(BcdError::Contract("rate bound needs a non-empty trace with one weight per gap".into()));
    }
    let mut running_min = Vec::with_capacity(trace.len());
    let mut products = Vec::with_capacity(trace.len());
    let (mut best, mut total) = (f64::INFINITY, 0.0);
    for (g, w) in trace.gaps.iter().zip(&trace.weights) {
        best = best.min(*g);
        total += w.abs();
        running_min.push(best);
        products.push(best * total);
    }
    let c = products.iter().cloned().fold(0.0, f64::max);
    let split = (TAIL_START * products.len() as f64).floor() as usize;
    let bounded = split == 0 || {
        let head = products[..split].iter().cloned().fold(0.0, f64::max);
        let tail = products[split..].iter().cloned().fold(0.0, f64::max);
        tail <= head * TAIL_SLACK
    };
    Ok(RateBound {
        c,
        running_min,
        products,
        passed: c.is_finite() && bounded,
    })
}

/// Writes one row per iteration:
/// `iteration,block,w_k,objective,gap,bound_product`.
pub fn write_trace_csv<W: Write>(trace: &BcdTrace, out: W) -> Result<(), BcdError> {
    let bound = check_rate_bound(trace)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "block", "w_k", "objective", "gap", "bound_product"])?;
    for i in 0..trace.len() {
        w.write_record([
            (i + 1).to_string(),
            trace.blocks[i].to_string(),
            format!("{:e}", trace.weights[i]),
            format!("{:e}", trace.objective[i]),
            format!("{:e}", trace.gaps[i]),
            format!("{:e}", bound.products[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One member of the SPD test family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyMember {
    pub dim: usize,
    pub cond: f64,
}

pub const FAMILY_DIMS: [usize; 3] = [8, 16, 64];
pub const FAMILY_CONDS: [f64; 3] = [1.0, 10.0, 100.0];
pub const FAMILY_BLOCKS: usize = 4;
pub const FAMILY_COUPLING: f64 = 0.3;

pub fn spd_family() -> Vec<FamilyMember> {
    FAMILY_DIMS
        .iter()
        .flat_map(|&dim| FAMILY_CONDS.iter().map(move |&cond| FamilyMember { dim, cond }))
        .collect()
}

impl FamilyMember {
    pub fn build(&self, seed: u64) -> Quadratic {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Quadratic::coupled_spd(self.dim, FAMILY_BLOCKS, self.cond, FAMILY_COUPLING, &mut rng)
    }
}

//! Plot-ready exports: score histograms and exact 2-D t-SNE projections.

use std::fmt::Write as _;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::trials::{TrialKind, TrialScore};

pub const HISTOGRAM_HEADER: &str = "bin_lo\tbin_hi\tgenuine\timpostor\tmorph";
pub const PROJECTION_HEADER: &str = "id\tlabel\tx\ty";

/// Uniform bins over `[lo, hi]`; every bin is left-closed and right-open
/// except the last, which also contains `hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub genuine: Vec<u64>,
    pub impostor: Vec<u64>,
    pub morph: Vec<u64>,
}

impl Histogram {
    pub fn new(n_bins: usize, range: (f64, f64)) -> Result<Self> {
        let (lo, hi) = range;
        if n_bins == 0 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::EmptyRange);
        }
        let width = hi - lo;
        let mut edges: Vec<f64> = (0..=n_bins).map(|i| lo + width * (i as f64 / n_bins as f64)).collect();
        edges[n_bins] = hi;
        if edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::EmptyRange);
        }
        Ok(Self { edges, genuine: vec![0; n_bins], impostor: vec![0; n_bins], morph: vec![0; n_bins] })
    }

    pub fn n_bins(&self) -> usize {
        self.genuine.len()
    }

    /// Index of the bin holding `x`, or `None` outside the range.
    pub fn bin_of(&self, x: f64) -> Option<usize> {
        let n = self.n_bins();
        let (lo, hi) = (self.edges[0], self.edges[n]);
        if !(lo..=hi).contains(&x) {
            return None;
        }
        if x == hi {
            return Some(n - 1);
        }
        let mut i = (((x - lo) / (hi - lo)) * n as f64) as usize;
        i = i.min(n - 1);
        // float division can land one bin off near an edge
        while i > 0 && x < self.edges[i] {
            i -= 1;
        }
        while i + 1 < n && x >= self.edges[i + 1] {
            i += 1;
        }
        Some(i)
    }

    pub fn counts(&self, kind: TrialKind) -> &[u64] {
        match kind {
            TrialKind::Genuine => &self.genuine,
            TrialKind::Impostor => &self.impostor,
            TrialKind::Morph => &self.morph,
        }
    }

    /// Returns false when `score` is outside the range and was dropped.
    pub fn add(&mut self, kind: TrialKind, score: f64) -> bool {
        let Some(i) = self.bin_of(score) else { return false };
        match kind {
            TrialKind::Genuine => self.genuine[i] += 1,
            TrialKind::Impostor => self.impostor[i] += 1,
            TrialKind::Morph => self.morph[i] += 1,
        }
        true
    }
}

pub fn histogram<'a, I>(trials: I, n_bins: usize, range: (f64, f64)) -> Result<Histogram>
where
    I: IntoIterator<Item = &'a TrialScore>,
{
    let mut h = Histogram::new(n_bins, range)?;
    for t in trials {
        h.add(t.kind, t.score);
    }
    Ok(h)
}

pub fn write_histogram(h: &Histogram, metadata: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in metadata {
        let _ = writeln!(out, "# {k}={v}");
    }
    out.push_str(HISTOGRAM_HEADER);
    out.push('\n');
    for i in 0..h.n_bins() {
        let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", h.edges[i], h.edges[i + 1], h.genuine[i], h.impostor[i], h.morph[i]);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            seed: 0,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self, n_points: usize) -> Result<()> {
        if n_points < 4 {
            return Err(Error::TooFewPoints(n_points));
        }
        if !(self.perplexity > 1.0) || !self.perplexity.is_finite() {
            return Err(Error::InvalidConfig(format!("perplexity must be > 1, got {}", self.perplexity)));
        }
        if self.perplexity >= (n_points - 1) as f64 / 3.0 {
            return Err(Error::PerplexityTooLarge { perplexity: self.perplexity, points: n_points });
        }
        if !(self.learning_rate > 0.0) || !(self.early_exaggeration >= 1.0) {
            return Err(Error::InvalidConfig("learning_rate must be > 0 and early_exaggeration >= 1".into()));
        }
        Ok(())
    }
}

/// Dense symmetric `n x n` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Affinities {
    pub n: usize,
    pub values: Vec<f64>,
}

impl Affinities {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let dim = points.first().map(Vec::len).ok_or(Error::EmptyInput("points"))?;
    for p in points {
        if p.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: p.len() });
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("t-SNE input".into()));
        }
    }
    Ok(dim)
}

fn squared_distances(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    d.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, out) in row.iter_mut().enumerate() {
            *out = points[i].iter().zip(&points[j]).fold(0.0, |acc, (a, b)| acc + (a - b) * (a - b));
        }
    });
    d
}

/// Conditional distribution `p_{j|i}` for one row of squared distances,
/// with the Gaussian precision found by bisection so that the entropy
/// matches `ln(perplexity)` to a relative tolerance of 1e-5.
fn conditional_row(d: &[f64], i: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let dmin = d.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, x)| *x).fold(f64::INFINITY, f64::min);
    let mut p = vec![0.0; d.len()];
    let (mut beta, mut lo, mut hi) = (1.0f64, 0.0f64, f64::INFINITY);
    for _ in 0..200 {
        let mut sum = 0.0;
        let mut weighted = 0.0;
        for (j, (pj, dj)) in p.iter_mut().zip(d).enumerate() {
            if j == i {
                *pj = 0.0;
                continue;
            }
            let shifted = dj - dmin;
            *pj = (-beta * shifted).exp();
            sum += *pj;
            weighted += shifted * *pj;
        }
        let entropy = sum.ln() + beta * weighted / sum;
        p.iter_mut().for_each(|x| *x /= sum);
        let diff = entropy - target;
        if diff.abs() <= 1e-5 * target {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
    }
    p
}

/// Row-normalized conditional affinities `p_{j|i}` (not symmetrized).
pub fn conditional_affinities(points: &[Vec<f64>], perplexity: f64) -> Result<Affinities> {
    check_points(points)?;
    let n = points.len();
    let d = squared_distances(points);
    if d.iter().all(|x| *x == 0.0) {
        return Err(Error::DegenerateDistances);
    }
    let rows: Vec<Vec<f64>> = (0..n).into_par_iter().map(|i| conditional_row(&d[i * n..(i + 1) * n], i, perplexity)).collect();
    Ok(Affinities { n, values: rows.concat() })
}

/// Symmetrized joint affinities `(p_{j|i} + p_{i|j}) / 2n`.
pub fn joint_affinities(points: &[Vec<f64>], perplexity: f64) -> Result<Affinities> {
    let c = conditional_affinities(points, perplexity)?;
    let n = c.n;
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            values[i * n + j] = (c.get(i, j) + c.get(j, i)) / (2 * n) as f64;
        }
    }
    Ok(Affinities { n, values })
}

/// Student-t kernel numerators and their off-diagonal total.
fn student_t(y: &[[f64; 2]]) -> (Vec<f64>, f64) {
    let n = y.len();
    let mut num = vec![0.0; n * n];
    let row_sums: Vec<f64> = num
        .par_chunks_mut(n)
        .enumerate()
        .map(|(i, row)| {
            let mut s = 0.0;
            for (j, out) in row.iter_mut().enumerate() {
                if i != j {
                    let dx = y[i][0] - y[j][0];
                    let dy = y[i][1] - y[j][1];
                    *out = 1.0 / (1.0 + dx * dx + dy * dy);
                    s += *out;
                }
            }
            s
        })
        .collect();
    let z = row_sums.iter().sum();
    (num, z)
}

/// Low-dimensional affinities `q_ij` for a layout.
pub fn q_matrix(y: &[[f64; 2]]) -> Affinities {
    let (mut num, z) = student_t(y);
    num.iter_mut().for_each(|x| *x /= z);
    Affinities { n: y.len(), values: num }
}

pub fn kl_divergence(p: &Affinities, y: &[[f64; 2]]) -> f64 {
    let (num, z) = student_t(y);
    kl_from(p, &num, z)
}

fn kl_from(p: &Affinities, num: &[f64], z: f64) -> f64 {
    let n = p.n;
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut s = 0.0;
            for j in 0..n {
                let pij = p.get(i, j);
                if i != j && pij > 0.0 {
                    s += pij * (pij / (num[i * n + j] / z)).ln();
                }
            }
            s
        })
        .collect();
    rows.iter().sum()
}

fn gradient_from(p: &Affinities, y: &[[f64; 2]], num: &[f64], z: f64, exaggeration: f64) -> Vec<[f64; 2]> {
    let n = p.n;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = num[i * n + j];
                let coef = 4.0 * (exaggeration * p.get(i, j) - w / z) * w;
                g[0] += coef * (y[i][0] - y[j][0]);
                g[1] += coef * (y[i][1] - y[j][1]);
            }
            g
        })
        .collect()
}

/// KL(P||Q) and its gradient with respect to the layout.
pub fn kl_gradient(p: &Affinities, y: &[[f64; 2]]) -> (f64, Vec<[f64; 2]>) {
    let (num, z) = student_t(y);
    (kl_from(p, &num, z), gradient_from(p, y, &num, z, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub kl: f64,
    pub q_sum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneResult {
    pub points: Vec<[f64; 2]>,
    pub p_sum: f64,
    pub initial_kl: f64,
    pub final_kl: f64,
    /// One entry per iteration, measured on the layout the gradient step
    /// started from, against the unexaggerated P.
    pub trace: Vec<IterationStats>,
}

pub fn initial_layout(n: usize, seed: u64) -> Vec<[f64; 2]> {
    (0..n)
        .map(|i| {
            let mut r = rng::stream(seed, i as u64);
            let a: f64 = StandardNormal.sample(&mut r);
            let b: f64 = StandardNormal.sample(&mut r);
            [1e-4 * a, 1e-4 * b]
        })
        .collect()
}

pub fn tsne(points: &[Vec<f64>], config: &TsneConfig) -> Result<TsneResult> {
    config.validate(points.len())?;
    let p = joint_affinities(points, config.perplexity)?;
    let n = p.n;
    let mut y = initial_layout(n, config.seed);
    let mut update = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut trace = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        let (num, z) = student_t(&y);
        trace.push(IterationStats { iteration: it, kl: kl_from(&p, &num, z), q_sum: num.iter().sum::<f64>() / z });
        let exaggeration = if it < config.exaggeration_iterations { config.early_exaggeration } else { 1.0 };
        let momentum = if it < config.momentum_switch { config.initial_momentum } else { config.final_momentum };
        let grad = gradient_from(&p, &y, &num, z, exaggeration);
        for i in 0..n {
            for d in 0..2 {
                let same_sign = (grad[i][d] > 0.0) == (update[i][d] > 0.0);
                gains[i][d] = if same_sign { gains[i][d] * 0.8 } else { gains[i][d] + 0.2 };
                gains[i][d] = gains[i][d].max(0.01);
                update[i][d] = momentum * update[i][d] - config.learning_rate * gains[i][d] * grad[i][d];
                y[i][d] += update[i][d];
            }
        }
        for d in 0..2 {
            let mean = y.iter().map(|v| v[d]).sum::<f64>() / n as f64;
            y.iter_mut().for_each(|v| v[d] -= mean);
        }
    }
    let initial_kl = trace.first().map(|s| s.kl).unwrap_or_else(|| kl_divergence(&p, &y));
    let final_kl = kl_divergence(&p, &y);
    Ok(TsneResult { points: y, p_sum: p.sum(), initial_kl, final_kl, trace })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionRow {
    pub id: String,
    pub label: String,
    pub x: f64,
    pub y: f64,
}

pub fn write_projection(rows: &[ProjectionRow], metadata: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in metadata {
        let _ = writeln!(out, "# {k}={v}");
    }
    out.push_str(PROJECTION_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", r.id, r.label, r.x, r.y);
    }
    out
}

pub fn read_projection(text: &str) -> Result<Vec<ProjectionRow>> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.starts_with('#') || line == PROJECTION_HEADER || line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let [id, label, x, y] = f[..] else {
            return Err(Error::parse_line(n + 1, format!("expected 4 fields, found {}", f.len())));
        };
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::parse_line(n + 1, format!("bad coordinate `{s}`")));
        rows.push(ProjectionRow { id: id.into(), label: label.into(), x: num(x)?, y: num(y)? });
    }
    Ok(rows)
}

pub fn export_projection(rows: &[ProjectionRow], metadata: &[(String, String)], path: &Path) -> Result<()> {
    std::fs::write(path, write_projection(rows, metadata))?;
    Ok(())
}

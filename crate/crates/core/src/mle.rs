//! Maximum-likelihood Tx-Rx distance estimation.
//!
//! The observed trace is modeled as independent counts per sample whose
//! means follow the closed-form multi-branch expected count. The estimator
//! knows the topology, the transmitted sequences and the release count;
//! only the distances are free. Search is an exhaustive grid over all
//! branches (up to two) or a restarted coordinate descent, followed by
//! per-coordinate golden-section refinement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::channel::{branch_expected_counts, ChannelParams, SymbolSequence, VelocityMode};
use crate::error::{Error, Result};
use crate::topology::BranchTopology;
use crate::trace::{CountTrace, TimeGrid};

/// Floor applied to the Poisson mean before taking its logarithm.
pub const LAMBDA_FLOOR: f64 = 1e-9;

/// Largest branch count searched exhaustively.
pub const MAX_EXHAUSTIVE_BRANCHES: usize = 2;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseModel {
    #[default]
    Poisson,
    /// Least squares, reported as the negative residual sum of squares.
    Gaussian,
}

impl std::str::FromStr for NoiseModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "poisson" => Ok(NoiseModel::Poisson),
            "gaussian" => Ok(NoiseModel::Gaussian),
            other => Err(Error::Argument(format!("unknown noise model {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Exhaustive,
    CoordinateDescent { restarts: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleConfig {
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_step: f64,
    pub refine_tolerance: f64,
    pub noise_model: NoiseModel,
    pub search: SearchMode,
}

impl MleConfig {
    pub fn new(
        grid_min: f64,
        grid_max: f64,
        grid_step: f64,
        refine_tolerance: f64,
        noise_model: NoiseModel,
    ) -> Result<Self> {
        let cfg = MleConfig {
            grid_min,
            grid_max,
            grid_step,
            refine_tolerance,
            noise_model,
            search: SearchMode::Exhaustive,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Exhaustive search for up to two branches, coordinate descent from
    /// eight restarts beyond that.
    pub fn for_branches(mut self, branches: usize, seed: u64) -> Self {
        self.search = if branches <= MAX_EXHAUSTIVE_BRANCHES {
            SearchMode::Exhaustive
        } else {
            SearchMode::CoordinateDescent { restarts: 8, seed }
        };
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.grid_min < self.grid_max) {
            return Err(Error::Argument(format!(
                "grid_min {} must be below grid_max {}",
                self.grid_min, self.grid_max
            )));
        }
        if !(self.grid_step > 0.0) {
            return Err(Error::Argument(format!(
                "grid_step must be positive, got {}",
                self.grid_step
            )));
        }
        if !(self.refine_tolerance > 0.0 && self.refine_tolerance < self.grid_step) {
            return Err(Error::Argument(format!(
                "refine_tolerance {} must be positive and below grid_step {}",
                self.refine_tolerance, self.grid_step
            )));
        }
        Ok(())
    }

    /// Parses `min:max:step` (meters).
    pub fn parse_grid(spec: &str) -> Result<(f64, f64, f64)> {
        let parts: Vec<f64> = spec
            .split(':')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Argument(format!("bad grid spec {spec:?}")))
            })
            .collect::<Result<_>>()?;
        match parts.as_slice() {
            [a, b, c] => Ok((*a, *b, *c)),
            _ => Err(Error::Argument(format!(
                "grid spec {spec:?} must be min:max:step"
            ))),
        }
    }

    pub fn grid_values(&self) -> Vec<f64> {
        let n = ((self.grid_max - self.grid_min) / self.grid_step + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| self.grid_min + i as f64 * self.grid_step)
            .collect()
    }
}

/// Everything the estimator is told besides the trace.
#[derive(Debug, Clone, PartialEq)]
pub struct KnownChannel {
    pub topology: BranchTopology,
    pub sequences: Vec<SymbolSequence>,
    pub n_tx: f64,
    pub t_s: f64,
    pub velocity_mode: VelocityMode,
    /// Sampling interval the trace is expected to have, when known.
    pub dt_sample: Option<f64>,
}

impl KnownChannel {
    fn check(&self, trace: &CountTrace) -> Result<()> {
        if self.sequences.len() != self.topology.branch_count() {
            return Err(Error::Argument(format!(
                "{} sequences for {} branches",
                self.sequences.len(),
                self.topology.branch_count()
            )));
        }
        if trace.is_empty() {
            return Err(Error::Argument("trace is empty".into()));
        }
        if let Some(dt) = self.dt_sample {
            if (dt - trace.dt_sample).abs() > 1e-9 * dt {
                return Err(Error::Argument(format!(
                    "trace sampled every {} s but the channel expects {} s",
                    trace.dt_sample, dt
                )));
            }
        }
        Ok(())
    }

    fn branch_counts(&self, branch: usize, distance: f64, grid: TimeGrid) -> Result<Vec<f64>> {
        let params = ChannelParams::for_branch_at(
            &self.topology,
            branch,
            distance,
            self.velocity_mode,
            self.n_tx,
            self.t_s,
        )?;
        Ok(branch_expected_counts(
            &params,
            &self.sequences[branch],
            grid,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleEstimate {
    pub distances: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations_evaluated: usize,
}

/// Log-likelihood of observed counts given per-sample model means.
pub fn log_likelihood_of_means(observed: &[f64], means: &[f64], noise: NoiseModel) -> f64 {
    match noise {
        NoiseModel::Poisson => observed
            .iter()
            .zip(means)
            .map(|(&n, &mu)| {
                let lambda = mu.max(LAMBDA_FLOOR);
                n * lambda.ln() - lambda - ln_gamma(n + 1.0)
            })
            .sum(),
        NoiseModel::Gaussian => -observed
            .iter()
            .zip(means)
            .map(|(&n, &mu)| (n - mu) * (n - mu))
            .sum::<f64>(),
    }
}

/// Log-likelihood of `trace` with the Tx placed at `candidate`.
pub fn log_likelihood(
    trace: &CountTrace,
    candidate: &[f64],
    known: &KnownChannel,
    noise: NoiseModel,
) -> Result<f64> {
    known.check(trace)?;
    if candidate.len() != known.topology.branch_count() {
        return Err(Error::Argument(format!(
            "{} candidate distances for {} branches",
            candidate.len(),
            known.topology.branch_count()
        )));
    }
    let grid = trace.grid();
    let mut means = vec![0.0; grid.len];
    for (k, &d) in candidate.iter().enumerate() {
        for (m, v) in means.iter_mut().zip(known.branch_counts(k, d, grid)?) {
            *m += v;
        }
    }
    Ok(log_likelihood_of_means(&trace.counts, &means, noise))
}

/// Per-branch expected traces at every grid distance; `None` where the
/// distance is not admissible for the topology.
struct GridCache {
    values: Vec<f64>,
    traces: Vec<Vec<Option<Vec<f64>>>>,
}

impl GridCache {
    fn build(known: &KnownChannel, grid: TimeGrid, values: Vec<f64>) -> Self {
        let traces = (0..known.topology.branch_count())
            .map(|k| {
                values
                    .par_iter()
                    .map(|&d| known.branch_counts(k, d, grid).ok())
                    .collect()
            })
            .collect();
        GridCache { values, traces }
    }

    fn sum(&self, indices: &[usize], len: usize) -> Option<Vec<f64>> {
        let mut means = vec![0.0; len];
        for (k, &i) in indices.iter().enumerate() {
            let t = self.traces[k][i].as_ref()?;
            for (m, v) in means.iter_mut().zip(t) {
                *m += v;
            }
        }
        Some(means)
    }
}

/// Result of the grid stage.
#[derive(Debug, Clone, PartialEq)]
pub struct GridOptimum {
    pub distances: Vec<f64>,
    pub log_likelihood: f64,
    pub evaluated: usize,
}

fn lexicographic_points(branches: usize, size: usize) -> Vec<Vec<usize>> {
    let total = size.pow(branches as u32);
    (0..total)
        .map(|mut flat| {
            let mut idx = vec![0; branches];
            for slot in idx.iter_mut().rev() {
                *slot = flat % size;
                flat /= size;
            }
            idx
        })
        .collect()
}

/// Grid stage of [`estimate`]. Ties go to the lexicographically smallest
/// distance vector.
pub fn grid_search(
    trace: &CountTrace,
    known: &KnownChannel,
    cfg: &MleConfig,
) -> Result<GridOptimum> {
    cfg.validate()?;
    known.check(trace)?;
    let branches = known.topology.branch_count();
    let grid = trace.grid();
    let cache = GridCache::build(known, grid, cfg.grid_values());
    let size = cache.values.len();

    let (best, evaluated) = match cfg.search {
        SearchMode::Exhaustive => {
            if branches > MAX_EXHAUSTIVE_BRANCHES {
                return Err(Error::Unsupported(format!(
                    "exhaustive grid search supports at most {MAX_EXHAUSTIVE_BRANCHES} branches, got {branches}; \
                     use coordinate-descent search"
                )));
            }
            let points = lexicographic_points(branches, size);
            let scores: Vec<f64> = points
                .par_iter()
                .map(|idx| match cache.sum(idx, grid.len) {
                    Some(means) => log_likelihood_of_means(&trace.counts, &means, cfg.noise_model),
                    None => f64::NEG_INFINITY,
                })
                .collect();
            let mut best: Option<(usize, f64)> = None;
            for (i, &s) in scores.iter().enumerate() {
                if best.map_or(s > f64::NEG_INFINITY, |(_, b)| s > b) {
                    best = Some((i, s));
                }
            }
            let (i, s) =
                best.ok_or_else(|| Error::Argument("no admissible distance on the grid".into()))?;
            ((points[i].clone(), s), points.len())
        }
        SearchMode::CoordinateDescent { restarts, seed } => coordinate_descent(
            trace,
            &cache,
            grid,
            cfg.noise_model,
            branches,
            restarts.max(1),
            seed,
        )?,
    };
    Ok(GridOptimum {
        distances: best.0.iter().map(|&i| cache.values[i]).collect(),
        log_likelihood: best.1,
        evaluated,
    })
}

fn coordinate_descent(
    trace: &CountTrace,
    cache: &GridCache,
    grid: TimeGrid,
    noise: NoiseModel,
    branches: usize,
    restarts: usize,
    seed: u64,
) -> Result<((Vec<usize>, f64), usize)> {
    let size = cache.values.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut evaluated = 0;
    let mut best: Option<(Vec<usize>, f64)> = None;
    let score = |idx: &[usize]| match cache.sum(idx, grid.len) {
        Some(means) => log_likelihood_of_means(&trace.counts, &means, noise),
        None => f64::NEG_INFINITY,
    };
    for _ in 0..restarts {
        let mut idx: Vec<usize> = (0..branches).map(|_| rng.gen_range(0..size)).collect();
        let mut current = score(&idx);
        evaluated += 1;
        for _sweep in 0..50 {
            let mut moved = false;
            for k in 0..branches {
                let scores: Vec<f64> = (0..size)
                    .into_par_iter()
                    .map(|i| {
                        let mut trial = idx.clone();
                        trial[k] = i;
                        score(&trial)
                    })
                    .collect();
                evaluated += size;
                for (i, &s) in scores.iter().enumerate() {
                    if s > current {
                        current = s;
                        idx[k] = i;
                        moved = true;
                    }
                }
            }
            if !moved {
                break;
            }
        }
        let better = match &best {
            None => current > f64::NEG_INFINITY,
            Some((b_idx, b)) => current > *b || (current == *b && idx < *b_idx),
        };
        if better {
            best = Some((idx, current));
        }
    }
    let best = best.ok_or_else(|| Error::Argument("no admissible distance on the grid".into()))?;
    Ok((best, evaluated))
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Maximizes `f` on `[a, b]` by golden-section search until the bracket is
/// narrower than `tol`. Returns the best point seen and its value.
fn golden_section_max(
    mut a: f64,
    mut b: f64,
    tol: f64,
    evals: &mut usize,
    mut f: impl FnMut(f64) -> f64,
) -> (f64, f64) {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    *evals += 2;
    while b - a >= tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        *evals += 1;
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Grid search followed by golden-section refinement of each coordinate
/// within one grid step of the grid optimum. A refined coordinate replaces
/// the current one only when it raises the likelihood.
pub fn estimate(trace: &CountTrace, known: &KnownChannel, cfg: &MleConfig) -> Result<MleEstimate> {
    let start = grid_search(trace, known, cfg)?;
    let grid = trace.grid();
    let branches = known.topology.branch_count();
    let mut evaluated = start.evaluated;
    let mut distances = start.distances;
    let mut best = start.log_likelihood;

    let mut per_branch: Vec<Vec<f64>> = distances
        .iter()
        .enumerate()
        .map(|(k, &d)| known.branch_counts(k, d, grid))
        .collect::<Result<_>>()?;

    for _sweep in 0..3 {
        let mut improved = false;
        for k in 0..branches {
            let mut others = vec![0.0; grid.len];
            for (j, t) in per_branch.iter().enumerate() {
                if j != k {
                    for (o, v) in others.iter_mut().zip(t) {
                        *o += v;
                    }
                }
            }
            let lo = (distances[k] - cfg.grid_step).max(cfg.grid_min);
            let hi = (distances[k] + cfg.grid_step).min(cfg.grid_max);
            let objective = |d: f64| match known.branch_counts(k, d, grid) {
                Ok(t) => {
                    let means: Vec<f64> = others.iter().zip(&t).map(|(o, v)| o + v).collect();
                    log_likelihood_of_means(&trace.counts, &means, cfg.noise_model)
                }
                Err(_) => f64::NEG_INFINITY,
            };
            let (d, value) =
                golden_section_max(lo, hi, cfg.refine_tolerance, &mut evaluated, objective);
            if value > best {
                best = value;
                distances[k] = d;
                per_branch[k] = known.branch_counts(k, d, grid)?;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }

    Ok(MleEstimate {
        distances,
        log_likelihood: best,
        iterations_evaluated: evaluated,
    })
}

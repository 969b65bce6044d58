//! Monte Carlo particle transport through a branched tube network.
//!
//! Each '1' symbol releases `n_tx` particles on the Tx cross-section at the
//! start of the symbol. A particle keeps its dimensionless radius `rho`
//! for its whole path and moves at the local Poiseuille speed
//! `2 v_mean (1 - rho^2)` of whichever segment it is in. Positions are
//! evaluated in closed form at the sample times, so there is no time
//! stepping. The receiver is transparent: particles inside
//! `[x_rx - L/2, x_rx + L/2]` are counted and keep flowing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::SymbolSequence;
use crate::error::{Error, Result};
use crate::topology::BranchTopology;
use crate::trace::{CountTrace, TimeGrid, TraceMeta};

/// Symbols per transmitter in every simulated run.
pub const DEFAULT_SYMBOLS: usize = 20;
pub const DEFAULT_N_TX: u64 = 1000;
pub const DEFAULT_SYMBOL_DURATION: f64 = 1.0;
pub const DEFAULT_HORIZON: f64 = 25.0;
pub const DEFAULT_DT_SAMPLE: f64 = 0.005;

const SEQUENCE_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub rho: f64,
    pub release_time: f64,
    pub branch_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub topology: BranchTopology,
    pub n_tx: u64,
    pub t_s: f64,
    pub horizon: f64,
    pub dt_sample: f64,
    pub seed: u64,
    pub n_iterations: usize,
    pub n_symbols: usize,
}

impl SimConfig {
    /// Reference run protocol: 20 one-second symbols over 25 s sampled every 5 ms.
    pub fn new(topology: BranchTopology) -> Self {
        SimConfig {
            topology,
            n_tx: DEFAULT_N_TX,
            t_s: DEFAULT_SYMBOL_DURATION,
            horizon: DEFAULT_HORIZON,
            dt_sample: DEFAULT_DT_SAMPLE,
            seed: 0,
            n_iterations: 1,
            n_symbols: DEFAULT_SYMBOLS,
        }
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        if !(self.t_s > 0.0) {
            return Err(Error::Argument(format!(
                "symbol duration must be positive, got {}",
                self.t_s
            )));
        }
        TimeGrid::over_horizon(self.dt_sample, self.horizon)
    }
}

/// Area-uniform radius from a uniform draw `u` in `[0, 1)`.
#[inline]
pub fn radius_from_uniform(u: f64) -> f64 {
    u.sqrt()
}

pub fn sample_radius<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    radius_from_uniform(rng.gen::<f64>())
}

/// Closed-form transit of one branch into the main tube for a particle at
/// fixed radius.
#[derive(Debug, Clone, Copy)]
struct Transit {
    branch_length: f64,
    branch_speed: f64,
    main_speed: f64,
}

impl Transit {
    fn new(topology: &BranchTopology, branch_index: usize, rho: f64) -> Result<Self> {
        let branch = topology.branch(branch_index)?;
        let profile = 2.0 * (1.0 - rho * rho);
        Ok(Transit {
            branch_length: branch.tx_offset,
            branch_speed: profile * branch.mean_speed(),
            main_speed: profile * topology.main_speed(),
        })
    }

    fn position(&self, elapsed: f64) -> f64 {
        if elapsed <= 0.0 {
            return 0.0;
        }
        let junction = self.branch_length / self.branch_speed;
        if elapsed <= junction {
            self.branch_speed * elapsed
        } else {
            self.branch_length + self.main_speed * (elapsed - junction)
        }
    }

    /// Elapsed time at which a point `s >= branch_length` downstream of
    /// the Tx is reached.
    fn time_to_main(&self, s: f64) -> f64 {
        self.branch_length / self.branch_speed + (s - self.branch_length) / self.main_speed
    }
}

/// Distance travelled along the Tx-Rx path by time `t`.
pub fn axial_position(p: &Particle, topology: &BranchTopology, t: f64) -> Result<f64> {
    let transit = Transit::new(topology, p.branch_index, p.rho)?;
    Ok(transit.position(t - p.release_time))
}

/// Random OOK sequences, one per branch.
pub fn random_sequences<R: Rng + ?Sized>(
    rng: &mut R,
    branches: usize,
    symbols: usize,
) -> Vec<SymbolSequence> {
    (0..branches)
        .map(|_| {
            SymbolSequence::new((0..symbols).map(|_| rng.gen_range(0..=1u8)).collect())
                .expect("bits")
        })
        .collect()
}

/// Per-iteration seed. Mixes `seed ^ iteration` with the splitmix64 finalizer.
pub fn derive_seed(seed: u64, iteration: u64) -> u64 {
    let mut z = (seed ^ iteration).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Adds the samples during which one particle sits in the receiver to a
/// difference array over the grid.
fn accumulate(transit: &Transit, release: f64, rx: (f64, f64), grid: TimeGrid, diff: &mut [i64]) {
    let (lo, hi) = rx;
    let inside = |j: usize| {
        let t = grid.time(j);
        if t < release {
            return false;
        }
        let x = transit.position(t - release);
        x >= lo && x <= hi
    };
    let t_in = release + transit.time_to_main(lo);
    let t_out = release + transit.time_to_main(hi);
    let last = grid.len - 1;
    // one sample of slack on each side of the inverse-time estimate;
    // direct evaluation of the position decides the boundary samples
    let a = (t_in / grid.dt).ceil() - 1.0;
    let b = (t_out / grid.dt).floor() + 1.0;
    if !(a.is_finite()) || a > last as f64 || b < 0.0 {
        return;
    }
    let a = a.max(0.0) as usize;
    let b = if b.is_finite() {
        (b as usize).min(last)
    } else {
        last
    };
    if a > b {
        return;
    }
    let Some(j_lo) = (a..=b.min(a + 2)).find(|&j| inside(j)) else {
        return;
    };
    let Some(j_hi) = (j_lo.max(b.saturating_sub(2))..=b)
        .rev()
        .find(|&j| inside(j))
    else {
        return;
    };
    diff[j_lo] += 1;
    diff[j_hi + 1] -= 1;
}

/// One simulated run. Particle draws for branch `k` come from stream `k`
/// of a ChaCha generator seeded with `seed`, so each branch's particles do
/// not depend on what the other branches transmit.
pub fn run_iteration(cfg: &SimConfig, seqs: &[SymbolSequence], seed: u64) -> Result<CountTrace> {
    let topology = &cfg.topology;
    if seqs.len() != topology.branch_count() {
        return Err(Error::Argument(format!(
            "{} sequences for {} branches",
            seqs.len(),
            topology.branch_count()
        )));
    }
    let grid = cfg.grid()?;
    if let Some(s) = seqs
        .iter()
        .find(|s| s.len() as f64 * cfg.t_s > cfg.horizon * (1.0 + 1e-12))
    {
        return Err(Error::Argument(format!(
            "{} symbols of {} s do not fit in a {} s horizon",
            s.len(),
            cfg.t_s,
            cfg.horizon
        )));
    }

    let mut diff = vec![0i64; grid.len + 1];
    let mut released = 0u64;
    for (branch, seq) in seqs.iter().enumerate() {
        let d = topology.tx_rx_distance(branch)?;
        let half = topology.rx_length() / 2.0;
        let rx = (d - half, d + half);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(branch as u64);
        for k in seq.pulse_indices() {
            let release = k as f64 * cfg.t_s;
            for _ in 0..cfg.n_tx {
                let rho = sample_radius(&mut rng);
                let transit = Transit::new(topology, branch, rho)?;
                accumulate(&transit, release, rx, grid, &mut diff);
                released += 1;
            }
        }
    }

    let mut running = 0i64;
    let counts = diff[..grid.len]
        .iter()
        .map(|d| {
            running += d;
            running as f64
        })
        .collect();

    Ok(CountTrace {
        dt_sample: grid.dt,
        counts,
        meta: TraceMeta {
            distances_m: topology.distances(),
            seed: Some(seed),
            sequences: seqs.iter().map(SymbolSequence::to_bit_string).collect(),
            n_tx: cfg.n_tx,
            released,
        },
    })
}

/// Runs `cfg.n_iterations` independent iterations with the Tx placed at
/// `distances`. Iteration `i` uses seed `derive_seed(seed, i)`; its random
/// sequences come from a dedicated stream of that seed.
pub fn run_batch(cfg: &SimConfig, distances: &[f64], seed: u64) -> Result<Vec<CountTrace>> {
    if cfg.n_iterations == 0 {
        return Err(Error::Argument("at least one iteration is required".into()));
    }
    let topology = cfg.topology.with_distances(distances)?;
    let cfg = SimConfig {
        topology,
        ..cfg.clone()
    };
    (0..cfg.n_iterations as u64)
        .into_par_iter()
        .map(|i| {
            let iter_seed = derive_seed(seed, i);
            let seqs = iteration_sequences(&cfg, iter_seed);
            run_iteration(&cfg, &seqs, iter_seed)
        })
        .collect()
}

/// The OOK sequences `run_batch` uses for an iteration seed.
pub fn iteration_sequences(cfg: &SimConfig, iter_seed: u64) -> Vec<SymbolSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(iter_seed);
    rng.set_stream(SEQUENCE_STREAM);
    random_sequences(&mut rng, cfg.topology.branch_count(), cfg.n_symbols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{p_ob, ChannelParams, VelocityMode};
    use crate::topology::{BranchSpec, DEFAULT_DIAMETER, DEFAULT_NU};
    use approx::assert_relative_eq;

    fn single_branch(offset: f64, speed: f64, main_speed: f64, main_length: f64) -> BranchTopology {
        let area = std::f64::consts::PI * (DEFAULT_DIAMETER / 2.0).powi(2);
        let b = BranchSpec::new(0.5, offset, speed * area, DEFAULT_DIAMETER).unwrap();
        let main_d = DEFAULT_DIAMETER * (speed / main_speed).sqrt();
        BranchTopology::new(vec![b], main_length, main_d, 0.01, DEFAULT_NU).unwrap()
    }

    #[test]
    fn radius_from_uniform_values() {
        assert_eq!(radius_from_uniform(0.0), 0.0);
        assert_eq!(radius_from_uniform(0.25), 0.5);
    }

    #[test]
    fn radius_is_area_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let mean_sq = (0..n).map(|_| sample_radius(&mut rng).powi(2)).sum::<f64>() / n as f64;
        assert!((mean_sq - 0.5).abs() < 0.002, "{mean_sq}");
    }

    #[test]
    fn centerline_and_wall_positions() {
        let topo = single_branch(0.3, 0.1, 0.1, 0.01);
        let p = Particle {
            rho: 0.0,
            release_time: 1.0,
            branch_index: 0,
        };
        assert_relative_eq!(
            axial_position(&p, &topo, 1.5).unwrap(),
            0.1,
            max_relative = 1e-12
        );
        let wall = Particle {
            rho: 1.0 - 1e-12,
            ..p
        };
        assert!(axial_position(&wall, &topo, 100.0).unwrap() < 1e-8);
        assert_eq!(axial_position(&p, &topo, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn junction_crossing_hand_integration() {
        // branch 0.06 m at mean 0.05 m/s, main at 0.10 m/s
        let topo = single_branch(0.06, 0.05, 0.10, 0.06);
        let p = Particle {
            rho: 0.0,
            release_time: 0.0,
            branch_index: 0,
        };
        assert_relative_eq!(
            axial_position(&p, &topo, 0.6).unwrap(),
            0.06,
            max_relative = 1e-9
        );
        assert_relative_eq!(
            axial_position(&p, &topo, 0.9).unwrap(),
            0.12,
            max_relative = 1e-9
        );
        assert_relative_eq!(
            axial_position(&p, &topo, 0.3).unwrap(),
            0.03,
            max_relative = 1e-9
        );
    }

    #[test]
    fn positions_are_monotone() {
        let topo = BranchTopology::symmetric(&[0.12, 0.24]).unwrap();
        for rho in [0.0, 0.3, 0.7, 0.99] {
            let p = Particle {
                rho,
                release_time: 0.2,
                branch_index: 1,
            };
            let mut prev = 0.0;
            for j in 0..2000 {
                let x = axial_position(&p, &topo, j as f64 * 0.01).unwrap();
                assert!(x >= prev);
                prev = x;
            }
        }
    }

    #[test]
    fn zero_sequences_give_zero_counts() {
        let cfg = SimConfig::new(BranchTopology::symmetric(&[0.12, 0.24]).unwrap());
        let seqs = vec![SymbolSequence::zeros(20), SymbolSequence::zeros(20)];
        let trace = run_iteration(&cfg, &seqs, 1).unwrap();
        assert_eq!(trace.len(), 5000);
        assert!(trace.counts.iter().all(|&c| c == 0.0));
        assert_eq!(trace.meta.released, 0);
    }

    #[test]
    fn released_particles_are_conserved() {
        let mut cfg = SimConfig::new(BranchTopology::symmetric(&[0.12, 0.24]).unwrap());
        cfg.n_tx = 50;
        let seqs = vec![
            SymbolSequence::parse("1101").unwrap(),
            SymbolSequence::parse("0111").unwrap(),
        ];
        let trace = run_iteration(&cfg, &seqs, 3).unwrap();
        assert_eq!(trace.meta.released, 6 * 50);
        // a single early pulse: every particle released passes through the
        // receiver at most once, and no sample sees more than were released
        assert!(trace.counts.iter().all(|&c| c <= 300.0));
    }

    #[test]
    fn mismatched_sequences_are_rejected() {
        let cfg = SimConfig::new(BranchTopology::symmetric(&[0.12, 0.24]).unwrap());
        let err = run_iteration(&cfg, &[SymbolSequence::zeros(20)], 0).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
        let long = vec![SymbolSequence::zeros(30), SymbolSequence::zeros(30)];
        assert!(run_iteration(&cfg, &long, 0).is_err());
    }

    #[test]
    fn counting_agrees_with_direct_position_checks() {
        let mut cfg = SimConfig::new(BranchTopology::symmetric(&[0.12]).unwrap());
        cfg.n_tx = 200;
        cfg.horizon = 5.0;
        let seqs = vec![SymbolSequence::parse("1").unwrap()];
        let trace = run_iteration(&cfg, &seqs, 11).unwrap();

        let topo = &cfg.topology;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        rng.set_stream(0);
        let particles: Vec<Particle> = (0..200)
            .map(|_| Particle {
                rho: sample_radius(&mut rng),
                release_time: 0.0,
                branch_index: 0,
            })
            .collect();
        let (lo, hi) = (0.12 - 0.005, 0.12 + 0.005);
        for j in (0..trace.len()).step_by(7) {
            let t = j as f64 * cfg.dt_sample;
            let n = particles
                .iter()
                .filter(|p| {
                    let x = axial_position(p, topo, t).unwrap();
                    x >= lo && x <= hi
                })
                .count();
            assert_eq!(trace.counts[j], n as f64, "sample {j}");
        }
    }

    #[test]
    fn same_seed_same_trace() {
        let mut cfg = SimConfig::new(BranchTopology::symmetric(&[0.06, 0.18]).unwrap());
        cfg.n_tx = 100;
        cfg.n_iterations = 3;
        let a = run_batch(&cfg, &[0.06, 0.18], 42).unwrap();
        let b = run_batch(&cfg, &[0.06, 0.18], 42).unwrap();
        assert_eq!(a, b);
        let c = run_batch(&cfg, &[0.06, 0.18], 43).unwrap();
        assert_ne!(a[0].counts, c[0].counts);
    }

    #[test]
    fn single_iteration_batch_matches_run_iteration() {
        let mut cfg = SimConfig::new(BranchTopology::symmetric(&[0.1, 0.2]).unwrap());
        cfg.n_tx = 100;
        let batch = run_batch(&cfg, &[0.1, 0.2], 5).unwrap();
        assert_eq!(batch.len(), 1);
        let iter_seed = derive_seed(5, 0);
        let seqs = iteration_sequences(&cfg, iter_seed);
        assert_eq!(batch[0], run_iteration(&cfg, &seqs, iter_seed).unwrap());
        assert_eq!(batch[0].meta.sequences.len(), 2);
        assert!(batch[0]
            .meta
            .sequences
            .iter()
            .all(|s| s.len() == DEFAULT_SYMBOLS));
    }

    #[test]
    fn branch_traces_add_up() {
        let mut cfg = SimConfig::new(BranchTopology::symmetric(&[0.12, 0.24]).unwrap());
        cfg.n_tx = 300;
        let a = SymbolSequence::parse("10110010011101000101").unwrap();
        let b = SymbolSequence::parse("01101100010110110001").unwrap();
        let z = SymbolSequence::zeros(20);
        let full = run_iteration(&cfg, &[a.clone(), b.clone()], 9).unwrap();
        let only_a = run_iteration(&cfg, &[a, z.clone()], 9).unwrap();
        let only_b = run_iteration(&cfg, &[z, b], 9).unwrap();
        for j in 0..full.len() {
            assert_eq!(full.counts[j], only_a.counts[j] + only_b.counts[j]);
        }
    }

    #[test]
    fn batch_mean_tracks_expected_counts() {
        let mut cfg = SimConfig::new(BranchTopology::symmetric(&[0.12, 0.24]).unwrap());
        cfg.n_iterations = 100;
        cfg.n_tx = 200;
        let traces = run_batch(&cfg, &[0.12, 0.24], 2024).unwrap();
        let topo = &cfg.topology;
        let params: Vec<_> = (0..2)
            .map(|k| {
                ChannelParams::for_branch(topo, k, VelocityMode::Harmonic, cfg.n_tx as f64, cfg.t_s)
                    .unwrap()
            })
            .collect();
        for &t in &[3.3, 7.05, 12.5, 20.0] {
            let j = (t / cfg.dt_sample).round() as usize;
            let t = j as f64 * cfg.dt_sample;
            let mut observed = 0.0;
            let mut expected = 0.0;
            let mut variance = 0.0;
            for tr in &traces {
                let seqs: Vec<_> = tr
                    .meta
                    .sequences
                    .iter()
                    .map(|s| SymbolSequence::parse(s).unwrap())
                    .collect();
                observed += tr.counts[j];
                for (p, s) in params.iter().zip(&seqs) {
                    for k in s.pulse_indices() {
                        let q = p_ob(p, t - k as f64 * cfg.t_s);
                        expected += p.n_tx * q;
                        variance += p.n_tx * q * (1.0 - q);
                    }
                }
            }
            let sigma = variance.sqrt();
            assert!(
                (observed - expected).abs() <= 3.0 * sigma.max(1.0),
                "t={t}: {observed} vs {expected} ± {sigma}"
            );
        }
    }
}

//! Closed-form flow channel: the observation probability of a single
//! molecule at a transparent receiver under laminar (Poiseuille) transport,
//! its superposition over an on-off keyed pulse train, and the sum over
//! several transmitting branches.
//!
//! A molecule released on the Tx cross-section at a uniformly random radius
//! moves at `2 v (1 - rho^2)`. Over a receiver `[d - L/2, d + L/2]` the
//! fraction of molecules inside at time `t` is
//!
//! ```text
//!           0                            t <= t1
//! P(t) =    1 - (d - L/2) / (2 v t)      t1 < t < t2
//!           L / (2 v t)                  t >= t2
//! ```
//!
//! with `t1,2 = (d -/+ L/2) / (2 v)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::BranchTopology;
use crate::trace::{CountTrace, TimeGrid, TraceMeta};

/// How branch and main-tube speeds are combined into one effective speed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VelocityMode {
    /// Length-weighted harmonic mean: preserves total travel time.
    #[default]
    Harmonic,
    /// Length-weighted arithmetic mean.
    Arithmetic,
}

impl std::str::FromStr for VelocityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "harmonic" => Ok(VelocityMode::Harmonic),
            "arithmetic" => Ok(VelocityMode::Arithmetic),
            other => Err(Error::Argument(format!("unknown velocity mode {other:?}"))),
        }
    }
}

/// Parameters of one Tx-Rx link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub d_tx_rx: f64,
    pub l_rx: f64,
    pub v_eff: f64,
    /// Molecules released per '1' symbol.
    pub n_tx: f64,
    pub t_s: f64,
}

impl ChannelParams {
    pub fn new(d_tx_rx: f64, l_rx: f64, v_eff: f64, n_tx: f64, t_s: f64) -> Result<Self> {
        let p = ChannelParams {
            d_tx_rx,
            l_rx,
            v_eff,
            n_tx,
            t_s,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        let finite = [self.d_tx_rx, self.l_rx, self.v_eff, self.n_tx, self.t_s]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Domain(format!(
                "non-finite channel parameter in {self:?}"
            )));
        }
        if !(self.l_rx >= 0.0 && self.d_tx_rx > self.l_rx / 2.0) {
            return Err(Error::Domain(format!(
                "Tx at distance {} lies inside a receiver of length {}",
                self.d_tx_rx, self.l_rx
            )));
        }
        if !(self.v_eff > 0.0) {
            return Err(Error::Domain(format!(
                "effective velocity must be positive, got {}",
                self.v_eff
            )));
        }
        if self.n_tx < 0.0 {
            return Err(Error::Domain(format!(
                "release count must be nonnegative, got {}",
                self.n_tx
            )));
        }
        if !(self.t_s > 0.0) {
            return Err(Error::Domain(format!(
                "symbol duration must be positive, got {}",
                self.t_s
            )));
        }
        Ok(())
    }

    /// Channel of branch `branch_index` of a topology.
    pub fn for_branch(
        topology: &BranchTopology,
        branch_index: usize,
        mode: VelocityMode,
        n_tx: f64,
        t_s: f64,
    ) -> Result<Self> {
        let branch = topology.branch(branch_index)?;
        PathSpec {
            branch_length: branch.tx_offset,
            branch_speed: branch.mean_speed(),
            main_length: topology.main_length(),
            main_speed: topology.main_speed(),
            rx_length: topology.rx_length(),
        }
        .channel(mode, n_tx, t_s)
    }

    /// Same as [`ChannelParams::for_branch`] with the Tx moved so that the
    /// Tx-Rx distance is `distance`.
    pub fn for_branch_at(
        topology: &BranchTopology,
        branch_index: usize,
        distance: f64,
        mode: VelocityMode,
        n_tx: f64,
        t_s: f64,
    ) -> Result<Self> {
        let branch = topology.branch(branch_index)?;
        let branch_length = distance - topology.main_length();
        if !(branch_length > 0.0) {
            return Err(Error::Domain(format!(
                "distance {distance} does not reach past the main tube length {}",
                topology.main_length()
            )));
        }
        PathSpec {
            branch_length,
            branch_speed: branch.mean_speed(),
            main_length: topology.main_length(),
            main_speed: topology.main_speed(),
            rx_length: topology.rx_length(),
        }
        .channel(mode, n_tx, t_s)
    }
}

/// Two-segment transport path: Tx to junction, junction to Rx center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSpec {
    pub branch_length: f64,
    pub branch_speed: f64,
    pub main_length: f64,
    pub main_speed: f64,
    pub rx_length: f64,
}

impl PathSpec {
    pub fn distance(&self) -> f64 {
        self.branch_length + self.main_length
    }

    pub fn effective_velocity(&self, mode: VelocityMode) -> f64 {
        let d = self.distance();
        match mode {
            VelocityMode::Harmonic => {
                d / (self.branch_length / self.branch_speed + self.main_length / self.main_speed)
            }
            VelocityMode::Arithmetic => {
                (self.branch_length * self.branch_speed + self.main_length * self.main_speed) / d
            }
        }
    }

    /// Link parameters for this path. The receiver extent is expressed at the
    /// effective speed: a receiver of length `L` in a tube moving at `v_main`
    /// is crossed in the same time as a length `L * v_eff / v_main` at
    /// `v_eff`, which keeps the closed form exact for advection through
    /// both segments.
    pub fn channel(&self, mode: VelocityMode, n_tx: f64, t_s: f64) -> Result<ChannelParams> {
        let v_eff = self.effective_velocity(mode);
        ChannelParams::new(
            self.distance(),
            self.rx_length * v_eff / self.main_speed,
            v_eff,
            n_tx,
            t_s,
        )
    }
}

/// Length-weighted effective speed between the Tx of `branch_index` and the receiver.
pub fn effective_velocity(
    topology: &BranchTopology,
    branch_index: usize,
    mode: VelocityMode,
) -> Result<f64> {
    let branch = topology.branch(branch_index)?;
    Ok(PathSpec {
        branch_length: branch.tx_offset,
        branch_speed: branch.mean_speed(),
        main_length: topology.main_length(),
        main_speed: topology.main_speed(),
        rx_length: topology.rx_length(),
    }
    .effective_velocity(mode))
}

/// Earliest arrival `t1` and the time `t2` after which a molecule may have
/// crossed the whole receiver.
pub fn arrival_window(params: &ChannelParams) -> (f64, f64) {
    let two_v = 2.0 * params.v_eff;
    let half = params.l_rx / 2.0;
    (
        (params.d_tx_rx - half) / two_v,
        (params.d_tx_rx + half) / two_v,
    )
}

/// Probability that a molecule released at time 0 is inside the receiver
/// at time `t`. Zero for `t <= 0`.
pub fn p_ob(params: &ChannelParams, t: f64) -> f64 {
    let (t1, t2) = arrival_window(params);
    if t <= t1 {
        0.0
    } else if t < t2 {
        1.0 - (params.d_tx_rx - params.l_rx / 2.0) / (2.0 * params.v_eff * t)
    } else {
        params.l_rx / (2.0 * params.v_eff * t)
    }
}

/// Peak observation probability, reached at `t2`.
pub fn peak_probability(params: &ChannelParams) -> f64 {
    params.l_rx / (params.d_tx_rx + params.l_rx / 2.0)
}

/// On-off keyed symbol sequence of one transmitter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolSequence {
    bits: Vec<u8>,
}

impl SymbolSequence {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::Argument(format!("symbol {b} is not a bit")));
        }
        Ok(SymbolSequence { bits })
    }

    pub fn zeros(len: usize) -> Self {
        SymbolSequence { bits: vec![0; len] }
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    /// Indices of the '1' symbols.
    pub fn pulse_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == 1)
            .map(|(k, _)| k)
    }

    pub fn to_bit_string(&self) -> String {
        self.bits
            .iter()
            .map(|&b| if b == 1 { '1' } else { '0' })
            .collect()
    }

    pub fn parse(s: &str) -> Result<Self> {
        let bits = s
            .trim()
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(Error::Argument(format!(
                    "invalid symbol {other:?} in {s:?}"
                ))),
            })
            .collect::<Result<Vec<u8>>>()?;
        Ok(SymbolSequence { bits })
    }
}

/// Expected molecule count at the receiver from one pulse train.
pub fn expected_count(params: &ChannelParams, seq: &SymbolSequence, t: f64) -> f64 {
    let sum: f64 = seq
        .pulse_indices()
        .map(|k| p_ob(params, t - k as f64 * params.t_s))
        .sum();
    params.n_tx * sum
}

fn check_lengths(params: &[ChannelParams], seqs: &[SymbolSequence]) -> Result<()> {
    if params.len() != seqs.len() {
        return Err(Error::Argument(format!(
            "{} channel parameter sets but {} sequences",
            params.len(),
            seqs.len()
        )));
    }
    Ok(())
}

/// Expected count summed over all transmitting branches.
pub fn expected_count_multi(
    params: &[ChannelParams],
    seqs: &[SymbolSequence],
    t: f64,
) -> Result<f64> {
    check_lengths(params, seqs)?;
    Ok(params
        .iter()
        .zip(seqs)
        .map(|(p, s)| expected_count(p, s, t))
        .sum())
}

/// Expected counts at arbitrary strictly increasing time points.
pub fn expected_counts_at(
    params: &[ChannelParams],
    seqs: &[SymbolSequence],
    times: &[f64],
) -> Result<Vec<f64>> {
    check_lengths(params, seqs)?;
    if times.is_empty() {
        return Err(Error::Argument("time grid is empty".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Argument(
            "time grid must be strictly increasing".into(),
        ));
    }
    Ok(times
        .iter()
        .map(|&t| {
            params
                .iter()
                .zip(seqs)
                .map(|(p, s)| expected_count(p, s, t))
                .sum()
        })
        .collect())
}

/// Single-branch expected trace on a uniform grid.
pub(crate) fn branch_expected_counts(
    params: &ChannelParams,
    seq: &SymbolSequence,
    grid: TimeGrid,
) -> Vec<f64> {
    (0..grid.len)
        .map(|j| expected_count(params, seq, grid.time(j)))
        .collect()
}

/// Expected trace on a uniform grid, one sample per grid point.
pub fn expected_trace(
    params: &[ChannelParams],
    seqs: &[SymbolSequence],
    grid: TimeGrid,
) -> Result<CountTrace> {
    check_lengths(params, seqs)?;
    if grid.len == 0 {
        return Err(Error::Argument("time grid is empty".into()));
    }
    let mut counts = vec![0.0; grid.len];
    for (p, s) in params.iter().zip(seqs) {
        for (c, v) in counts.iter_mut().zip(branch_expected_counts(p, s, grid)) {
            *c += v;
        }
    }
    Ok(CountTrace {
        dt_sample: grid.dt,
        counts,
        meta: TraceMeta {
            distances_m: params.iter().map(|p| p.d_tx_rx).collect(),
            seed: None,
            sequences: seqs.iter().map(SymbolSequence::to_bit_string).collect(),
            n_tx: params.first().map_or(0, |p| p.n_tx as u64),
            released: 0,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn reference() -> ChannelParams {
        ChannelParams::new(0.12, 0.01, 0.10, 1000.0, 1.0).unwrap()
    }

    #[test]
    fn arrival_window_hand_values() {
        let (t1, t2) = arrival_window(&reference());
        assert_relative_eq!(t1, 0.575, max_relative = 1e-12);
        assert_relative_eq!(t2, 0.625, max_relative = 1e-12);

        let point = ChannelParams::new(0.12, 0.0, 0.10, 1.0, 1.0).unwrap();
        let (a, b) = arrival_window(&point);
        assert_eq!(a, b);
        assert_relative_eq!(a, 0.6, max_relative = 1e-12);

        let fast = ChannelParams {
            v_eff: 0.2,
            ..reference()
        };
        let (f1, f2) = arrival_window(&fast);
        assert_relative_eq!(f1, t1 / 2.0, max_relative = 1e-12);
        assert_relative_eq!(f2, t2 / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn p_ob_hand_values() {
        let p = reference();
        assert_eq!(p_ob(&p, 0.5), 0.0);
        assert_relative_eq!(p_ob(&p, 0.6), 0.0416667, max_relative = 1e-5);
        assert_relative_eq!(p_ob(&p, 1.0), 0.05, max_relative = 1e-12);
        assert_eq!(p_ob(&p, -3.0), 0.0);
    }

    #[test]
    fn effective_velocity_hand_values() {
        let path = PathSpec {
            branch_length: 0.06,
            branch_speed: 0.05,
            main_length: 0.06,
            main_speed: 0.10,
            rx_length: 0.01,
        };
        assert_relative_eq!(
            path.effective_velocity(VelocityMode::Harmonic),
            0.0666667,
            max_relative = 1e-5
        );
        assert_relative_eq!(
            path.effective_velocity(VelocityMode::Arithmetic),
            0.075,
            max_relative = 1e-12
        );
        let flat = PathSpec {
            branch_speed: 0.08,
            main_speed: 0.08,
            ..path
        };
        assert_relative_eq!(
            flat.effective_velocity(VelocityMode::Harmonic),
            0.08,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            flat.effective_velocity(VelocityMode::Arithmetic),
            0.08,
            max_relative = 1e-12
        );
    }

    #[test]
    fn receiver_length_is_unchanged_without_speed_change() {
        let path = PathSpec {
            branch_length: 0.1,
            branch_speed: 0.09,
            main_length: 0.01,
            main_speed: 0.09,
            rx_length: 0.01,
        };
        let p = path.channel(VelocityMode::Harmonic, 1.0, 1.0).unwrap();
        assert_relative_eq!(p.l_rx, 0.01, max_relative = 1e-12);
    }

    #[test]
    fn invalid_params_are_rejected() {
        assert!(ChannelParams::new(0.004, 0.01, 0.1, 1.0, 1.0).is_err());
        assert!(ChannelParams::new(0.1, 0.01, 0.0, 1.0, 1.0).is_err());
        assert!(ChannelParams::new(0.1, 0.01, 0.1, -1.0, 1.0).is_err());
        assert!(ChannelParams::new(0.1, 0.01, 0.1, 1.0, 0.0).is_err());
    }

    #[test]
    fn pulse_train_superposition() {
        let p = reference();
        let zeros = SymbolSequence::zeros(20);
        for t in [0.0, 0.6, 3.3, 24.9] {
            assert_eq!(expected_count(&p, &zeros, t), 0.0);
        }
        let one = SymbolSequence::new(vec![1]).unwrap();
        assert_relative_eq!(
            expected_count(&p, &one, 0.6),
            1000.0 * p_ob(&p, 0.6),
            max_relative = 1e-15
        );
        let two = SymbolSequence::new(vec![1, 1]).unwrap();
        let t = 1.6;
        let hand = 1000.0 * (p_ob(&p, 1.6) + p_ob(&p, 0.6));
        assert_relative_eq!(expected_count(&p, &two, t), hand, max_relative = 1e-14);
        assert!(p_ob(&p, 0.6) > 0.0 && p_ob(&p, 1.6) > 0.0);
    }

    #[test]
    fn multi_branch_reduction_and_symmetry() {
        let p = reference();
        let s = SymbolSequence::parse("1011").unwrap();
        for t in [0.6, 1.7, 3.61] {
            assert_eq!(
                expected_count_multi(&[p], std::slice::from_ref(&s), t).unwrap(),
                expected_count(&p, &s, t)
            );
            assert_relative_eq!(
                expected_count_multi(&[p, p], &[s.clone(), s.clone()], t).unwrap(),
                2.0 * expected_count(&p, &s, t),
                max_relative = 1e-15
            );
        }
        assert!(matches!(
            expected_count_multi(&[p], &[], 0.5),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn trace_grid_edge_cases() {
        let p = reference();
        let s = SymbolSequence::parse("1").unwrap();
        let single = expected_trace(
            &[p],
            std::slice::from_ref(&s),
            TimeGrid::new(0.005, 1).unwrap(),
        )
        .unwrap();
        assert_eq!(single.len(), 1);
        let grid = TimeGrid::over_horizon(0.005, 25.0).unwrap();
        assert_eq!(grid.len, 5000);
        let z = expected_trace(&[p], &[SymbolSequence::zeros(20)], grid).unwrap();
        assert!(z.counts.iter().all(|&c| c == 0.0));
        assert!(TimeGrid::new(0.005, 0).is_err());
        assert!(expected_counts_at(&[p], std::slice::from_ref(&s), &[]).is_err());
        assert!(expected_counts_at(&[p], &[s], &[0.1, 0.1]).is_err());
    }

    #[test]
    fn delaying_every_bit_shifts_the_trace() {
        let p = reference();
        let grid = TimeGrid::over_horizon(0.005, 25.0).unwrap();
        let s = SymbolSequence::parse("1100101").unwrap();
        let delayed = SymbolSequence::parse("01100101").unwrap();
        let a = expected_trace(&[p], &[s], grid).unwrap();
        let b = expected_trace(&[p], &[delayed], grid).unwrap();
        let shift = 200;
        for j in 0..grid.len - shift {
            assert!(
                (a.counts[j] - b.counts[j + shift]).abs() <= 1e-12 * a.counts[j].abs().max(1.0)
            );
        }
        assert!(b.counts[..shift].iter().all(|&c| c == 0.0));
    }

    #[test]
    fn bit_strings_round_trip() {
        let s = SymbolSequence::parse("0110").unwrap();
        assert_eq!(s.to_bit_string(), "0110");
        assert_eq!(s.ones(), 2);
        assert!(SymbolSequence::parse("012").is_err());
        assert!(SymbolSequence::new(vec![0, 2]).is_err());
    }

    fn params_strategy() -> impl Strategy<Value = ChannelParams> {
        (0.005f64..0.5, 0.0f64..1.0, 0.001f64..1.0).prop_map(|(d, frac, v)| {
            let l = 1.9 * d * frac;
            ChannelParams::new(d, l, v, 1.0, 1.0).unwrap()
        })
    }

    proptest! {
        #[test]
        fn p_ob_is_a_probability(p in params_strategy(), t in 0.0f64..1e3) {
            let v = p_ob(&p, t);
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn p_ob_is_continuous_and_peaks_at_t2(p in params_strategy()) {
            let (t1, t2) = arrival_window(&p);
            let mid_at_t1 = 1.0 - (p.d_tx_rx - p.l_rx / 2.0) / (2.0 * p.v_eff * t1);
            prop_assert!(mid_at_t1.abs() <= 1e-12);
            let mid_at_t2 = 1.0 - (p.d_tx_rx - p.l_rx / 2.0) / (2.0 * p.v_eff * t2);
            let tail_at_t2 = p.l_rx / (2.0 * p.v_eff * t2);
            prop_assert!((mid_at_t2 - tail_at_t2).abs() <= 1e-12);
            prop_assert!((p_ob(&p, t2) - peak_probability(&p)).abs() <= 1e-12);
        }

        #[test]
        fn p_ob_rises_then_decays(p in params_strategy(), a in 0.01f64..0.99, b in 0.01f64..0.99) {
            prop_assume!(p.l_rx > 1e-6);
            let (t1, t2) = arrival_window(&p);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(hi - lo > 1e-6);
            let rise_lo = t1 + lo * (t2 - t1);
            let rise_hi = t1 + hi * (t2 - t1);
            prop_assert!(p_ob(&p, rise_lo) < p_ob(&p, rise_hi));
            let fall_lo = t2 * (1.0 + lo * 10.0);
            let fall_hi = t2 * (1.0 + hi * 10.0);
            prop_assert!(p_ob(&p, fall_lo) > p_ob(&p, fall_hi));
        }
    }
}

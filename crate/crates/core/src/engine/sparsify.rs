//! Masked transplanting of donor samples into the query.

use serde::{Deserialize, Serialize};

use super::rpeaks::RPeaks;
use crate::classifier::{Model, ProbVec};
use crate::data::{LabelVec, Series};
use crate::error::{CfxError, Result};

/// Binary `T x C` modification mask, row-major like [`Series`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    n_timesteps: usize,
    n_channels: usize,
    bits: Vec<bool>,
}

/// Per-channel run-length encoding of a mask: `[start, length]` of each run
/// of ones.
pub type MaskRuns = Vec<Vec<[usize; 2]>>;

impl Mask {
    pub fn zeros(n_timesteps: usize, n_channels: usize) -> Mask {
        Mask {
            n_timesteps,
            n_channels,
            bits: vec![false; n_timesteps * n_channels],
        }
    }

    pub fn ones(n_timesteps: usize, n_channels: usize) -> Mask {
        Mask {
            n_timesteps,
            n_channels,
            bits: vec![true; n_timesteps * n_channels],
        }
    }

    pub fn from_bits(n_timesteps: usize, n_channels: usize, bits: Vec<bool>) -> Result<Mask> {
        if bits.len() != n_timesteps * n_channels {
            return Err(CfxError::Shape {
                expected: format!("{} mask bits", n_timesteps * n_channels),
                got: format!("{}", bits.len()),
            });
        }
        Ok(Mask {
            n_timesteps,
            n_channels,
            bits,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_timesteps, self.n_channels)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, t: usize, c: usize) -> bool {
        self.bits[t * self.n_channels + c]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.bits.len() as f64
    }

    pub fn runs(&self) -> MaskRuns {
        (0..self.n_channels)
            .map(|c| {
                let mut runs = Vec::new();
                let mut t = 0;
                while t < self.n_timesteps {
                    if self.get(t, c) {
                        let start = t;
                        while t < self.n_timesteps && self.get(t, c) {
                            t += 1;
                        }
                        runs.push([start, t - start]);
                    } else {
                        t += 1;
                    }
                }
                runs
            })
            .collect()
    }

    pub fn from_runs(n_timesteps: usize, runs: &MaskRuns) -> Result<Mask> {
        let n_channels = runs.len();
        let mut mask = Mask::zeros(n_timesteps, n_channels);
        for (c, channel) in runs.iter().enumerate() {
            for &[start, len] in channel {
                if start + len > n_timesteps {
                    return Err(CfxError::format(
                        "mask runs",
                        format!("run {start}+{len} exceeds T={n_timesteps}"),
                    ));
                }
                for t in start..start + len {
                    mask.bits[t * n_channels + c] = true;
                }
            }
        }
        Ok(mask)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsifyConfig {
    pub initial_keep_ratio: f64,
    pub keep_ratio_step: f64,
    pub max_keep_ratio: f64,
    pub min_segment_len: usize,
    pub rpeak_weight: f64,
    pub rpeak_halfwidth: usize,
}

impl Default for SparsifyConfig {
    fn default() -> Self {
        SparsifyConfig {
            initial_keep_ratio: 0.10,
            keep_ratio_step: 0.05,
            max_keep_ratio: 1.0,
            min_segment_len: 10,
            rpeak_weight: 2.0,
            rpeak_halfwidth: 5,
        }
    }
}

impl SparsifyConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.initial_keep_ratio > 0.0
            && self.initial_keep_ratio <= self.max_keep_ratio
            && self.max_keep_ratio <= 1.0
            && self.keep_ratio_step > 0.0
            && self.min_segment_len >= 1
            && self.rpeak_weight.is_finite();
        if ok {
            Ok(())
        } else {
            Err(CfxError::InvalidArgument(format!(
                "invalid sparsify config {self:?}"
            )))
        }
    }

    /// Keep ratios tried in order, ending exactly at the maximum.
    pub fn schedule(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut i = 0usize;
        loop {
            let r = self.initial_keep_ratio + i as f64 * self.keep_ratio_step;
            if r >= self.max_keep_ratio - 1e-9 {
                break;
            }
            out.push(r);
            i += 1;
        }
        out.push(self.max_keep_ratio);
        out
    }
}

/// `|donor - query|`, scaled by `rpeak_weight` near query R-peaks.
pub fn importance_scores(
    query: &Series,
    donor: &Series,
    query_peaks: &RPeaks,
    config: &SparsifyConfig,
) -> Result<Vec<f64>> {
    query.check_same_shape(donor)?;
    let c = query.n_channels();
    Ok(query
        .values()
        .iter()
        .zip(donor.values())
        .enumerate()
        .map(|(i, (&q, &d))| {
            let diff = (f64::from(d) - f64::from(q)).abs();
            if query_peaks.near(i / c, config.rpeak_halfwidth) {
                diff * config.rpeak_weight
            } else {
                diff
            }
        })
        .collect())
}

/// Zeroes every per-channel run of ones shorter than `min_len`.
pub fn clean_segments(mask: &Mask, min_len: usize) -> Mask {
    let mut out = mask.clone();
    let c = mask.n_channels;
    for (ch, runs) in mask.runs().iter().enumerate() {
        for &[start, len] in runs {
            if len < min_len {
                for t in start..start + len {
                    out.bits[t * c + ch] = false;
                }
            }
        }
    }
    out
}

/// The `ceil(ratio * N)` highest-scoring coordinates; ties go to the lower
/// index.
pub fn top_fraction_mask(scores: &[f64], shape: (usize, usize), ratio: f64) -> Mask {
    let n = scores.len();
    let k = ((ratio * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut mask = Mask::zeros(shape.0, shape.1);
    for &i in &order[..k] {
        mask.bits[i] = true;
    }
    mask
}

/// `query` where the mask is 0, `donor` where it is 1.
pub fn compose(query: &Series, donor: &Series, mask: &Mask) -> Result<Series> {
    query.check_same_shape(donor)?;
    if mask.shape() != query.shape() {
        return Err(CfxError::Shape {
            expected: format!("{:?} mask", query.shape()),
            got: format!("{:?}", mask.shape()),
        });
    }
    let values = query
        .values()
        .iter()
        .zip(donor.values())
        .zip(&mask.bits)
        .map(|((&q, &d), &m)| if m { d } else { q })
        .collect();
    query.with_values(values)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseOutcome {
    pub mask: Mask,
    pub series: Series,
    pub probs: ProbVec,
    pub labels: LabelVec,
    pub keep_ratio: f64,
    /// Model evaluations spent on the schedule.
    pub attempts: usize,
    /// Whether `labels` equals the target.
    pub reached: bool,
}

fn run_schedule(
    query: &Series,
    donor: &Series,
    model: &Model,
    target: &LabelVec,
    scores: &[f64],
    config: &SparsifyConfig,
) -> Result<(Option<SparseOutcome>, usize)> {
    let shape = query.shape();
    let min_len = config.min_segment_len.min(shape.0);
    let mut attempts = 0;
    let mut last: Option<Mask> = None;
    for ratio in config.schedule() {
        let mask = clean_segments(&top_fraction_mask(scores, shape, ratio), min_len);
        if last.as_ref() == Some(&mask) {
            continue;
        }
        let candidate = compose(query, donor, &mask)?;
        let (probs, labels) = model.predict(&candidate)?;
        attempts += 1;
        if labels == *target {
            return Ok((
                Some(SparseOutcome {
                    mask,
                    series: candidate,
                    probs,
                    labels,
                    keep_ratio: ratio,
                    attempts,
                    reached: true,
                }),
                attempts,
            ));
        }
        last = Some(mask);
    }
    Ok((None, attempts))
}

/// Smallest keep ratio on the schedule whose masked transplant is predicted
/// exactly as `target`.
pub fn sparsify(
    query: &Series,
    donor: &Series,
    model: &Model,
    target: &LabelVec,
    query_peaks: &RPeaks,
    config: &SparsifyConfig,
) -> Result<SparseOutcome> {
    config.validate()?;
    if model.predict_labels(donor)? != *target {
        return Err(CfxError::DonorNotTarget);
    }
    let scores = importance_scores(query, donor, query_peaks, config)?;
    match run_schedule(query, donor, model, target, &scores, config)? {
        (Some(outcome), _) => Ok(outcome),
        (None, _) => Err(CfxError::SparsifyExhausted {
            max_keep_ratio: config.max_keep_ratio,
        }),
    }
}

/// Like [`sparsify`] but accepts any donor; when no mask reaches the
/// target, returns the full donor with `reached = false`.
pub fn sparsify_best_effort(
    query: &Series,
    donor: &Series,
    model: &Model,
    target: &LabelVec,
    query_peaks: &RPeaks,
    config: &SparsifyConfig,
) -> Result<SparseOutcome> {
    config.validate()?;
    let scores = importance_scores(query, donor, query_peaks, config)?;
    let (found, attempts) = run_schedule(query, donor, model, target, &scores, config)?;
    if let Some(outcome) = found {
        return Ok(outcome);
    }
    let (probs, labels) = model.predict(donor)?;
    let (t, c) = query.shape();
    Ok(SparseOutcome {
        mask: Mask::ones(t, c),
        series: donor.clone(),
        reached: labels == *target,
        probs,
        labels,
        keep_ratio: 1.0,
        attempts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{FnClassifier, ModelThresholds};

    fn mask1(bits: &[u8]) -> Mask {
        Mask::from_bits(bits.len(), 1, bits.iter().map(|&b| b == 1).collect()).unwrap()
    }

    #[test]
    fn clean_segment_examples() {
        let mut bits = vec![0u8; 30];
        bits[3..8].fill(1);
        bits[15..25].fill(1);
        let cleaned = clean_segments(&mask1(&bits), 10);
        assert_eq!(cleaned.runs(), vec![vec![[15, 10]]]);
        let ones = Mask::ones(30, 2);
        assert_eq!(clean_segments(&ones, 10), ones);
        assert_eq!(clean_segments(&cleaned, 10), cleaned);
    }

    #[test]
    fn runs_round_trip() {
        let m = Mask::from_bits(
            4,
            2,
            vec![true, false, true, true, false, true, true, false],
        )
        .unwrap();
        assert_eq!(m.runs(), vec![vec![[0, 2], [3, 1]], vec![[1, 2]]]);
        assert_eq!(Mask::from_runs(4, &m.runs()).unwrap(), m);
    }

    #[test]
    fn importance_doubles_near_peaks() {
        let q = Series::from_channel("q", &[0.0; 40]).unwrap();
        let d = Series::from_channel("d", &[1.0; 40]).unwrap();
        let peaks = RPeaks::new(vec![20]);
        let s = importance_scores(&q, &d, &peaks, &SparsifyConfig::default()).unwrap();
        assert_eq!(s[20] / s[0], 2.0);
        assert_eq!(s[15], 2.0);
        assert_eq!(s[14], 1.0);
        assert!(
            importance_scores(&q, &q, &peaks, &SparsifyConfig::default())
                .unwrap()
                .iter()
                .all(|&v| v == 0.0)
        );
        let plain =
            importance_scores(&q, &d, &RPeaks::default(), &SparsifyConfig::default()).unwrap();
        assert!(plain.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn schedule_ends_at_max() {
        let s = SparsifyConfig::default().schedule();
        assert_eq!(s.len(), 19);
        assert!((s[0] - 0.10).abs() < 1e-12);
        assert_eq!(*s.last().unwrap(), 1.0);
        let full = SparsifyConfig {
            initial_keep_ratio: 1.0,
            ..SparsifyConfig::default()
        };
        assert_eq!(full.schedule(), vec![1.0]);
    }

    /// Class 1 fires when the window 40..52 averages above 0.5.
    fn window_model() -> Model {
        Model::new(
            FnClassifier::new(2, |s: &Series| {
                let m = s.values()[40..52].iter().sum::<f32>() / 12.0;
                if m > 0.5 {
                    vec![0.1, 0.9]
                } else {
                    vec![0.9, 0.1]
                }
            }),
            ModelThresholds::uniform(2, 0.5).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn single_window_flip_stays_sparse() {
        let q = Series::from_channel("q", &[0.0; 200]).unwrap();
        let d = Series::from_fn(
            "d",
            200,
            1,
            |t, _| if (40..52).contains(&t) { 1.0 } else { 0.2 },
        )
        .unwrap();
        let target = LabelVec::one_hot(2, 1);
        let out = sparsify(
            &q,
            &d,
            &window_model(),
            &target,
            &RPeaks::default(),
            &SparsifyConfig::default(),
        )
        .unwrap();
        assert!(out.reached);
        assert!(out.mask.fraction() <= 0.10);
        assert_eq!(out.labels, target);
        for (i, (&cf, &qv)) in out.series.values().iter().zip(q.values()).enumerate() {
            if !out.mask.bits()[i] {
                assert_eq!(cf, qv);
            }
        }
    }

    #[test]
    fn full_ratio_returns_donor() {
        let q = Series::from_channel("q", &[0.0; 100]).unwrap();
        let d = Series::from_channel("d", &[1.0; 100]).unwrap();
        let cfg = SparsifyConfig {
            initial_keep_ratio: 1.0,
            ..SparsifyConfig::default()
        };
        let target = LabelVec::one_hot(2, 1);
        let out = sparsify(&q, &d, &window_model(), &target, &RPeaks::default(), &cfg).unwrap();
        assert_eq!(out.series.values(), d.values());
        assert_eq!(out.labels, target);
    }

    #[test]
    fn donor_must_reach_target() {
        let q = Series::from_channel("q", &[0.0; 100]).unwrap();
        let target = LabelVec::one_hot(2, 1);
        let r = sparsify(
            &q,
            &q,
            &window_model(),
            &target,
            &RPeaks::default(),
            &SparsifyConfig::default(),
        );
        assert!(matches!(r, Err(CfxError::DonorNotTarget)));
        let best = sparsify_best_effort(
            &q,
            &q,
            &window_model(),
            &target,
            &RPeaks::default(),
            &SparsifyConfig::default(),
        )
        .unwrap();
        assert!(!best.reached);
        assert_eq!(best.mask.fraction(), 1.0);
    }
}

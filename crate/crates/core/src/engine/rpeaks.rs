//! A small R-peak detector: local maxima above `mean + k * std` of one lead,
//! thinned by a refractory gap with the tallest peaks winning.

use serde::{Deserialize, Serialize};

use crate::data::Series;

/// Strictly increasing peak indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RPeaks(Vec<usize>);

impl RPeaks {
    /// Sorts and deduplicates.
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        RPeaks(indices)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Whether `t` lies within `halfwidth` samples of any peak.
    pub fn near(&self, t: usize, halfwidth: usize) -> bool {
        let i = self.0.partition_point(|&p| p + halfwidth < t);
        self.0.get(i).is_some_and(|&p| p <= t + halfwidth)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakConfig {
    pub sampling_rate: f64,
    pub threshold_std: f64,
    /// Minimum peak separation in seconds.
    pub refractory_s: f64,
    /// Preferred lead.
    pub lead: usize,
}

impl Default for PeakConfig {
    fn default() -> Self {
        PeakConfig {
            sampling_rate: 100.0,
            threshold_std: 1.5,
            refractory_s: 0.2,
            lead: 1,
        }
    }
}

impl PeakConfig {
    pub fn refractory_samples(&self) -> usize {
        (self.refractory_s * self.sampling_rate).round().max(1.0) as usize
    }
}

pub fn detect_rpeaks(series: &Series, lead: usize, config: &PeakConfig) -> RPeaks {
    let x: Vec<f64> = series.channel(lead).into_iter().map(f64::from).collect();
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let std = (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    let threshold = mean + config.threshold_std * std;

    // interior samples only: a maximum on the boundary may be a cut-off beat
    let mut candidates: Vec<usize> = (1..x.len().saturating_sub(1))
        .filter(|&t| x[t] > threshold && x[t] >= x[t - 1] && x[t] > x[t + 1])
        .collect();
    candidates.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));

    let gap = config.refractory_samples();
    let mut accepted: Vec<usize> = Vec::new();
    for c in candidates {
        if accepted.iter().all(|&p| p.abs_diff(c) >= gap) {
            accepted.push(c);
        }
    }
    RPeaks::new(accepted)
}

fn peak_to_peak(series: &Series, lead: usize) -> f32 {
    let ch = series.channel(lead);
    let max = ch.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let min = ch.iter().copied().fold(f32::INFINITY, f32::min);
    max - min
}

/// Detects on the preferred lead, falling back to the lead with the largest
/// peak-to-peak range when fewer than two peaks are found. Returns the peaks
/// and the lead used.
pub fn detect_rpeaks_auto(series: &Series, config: &PeakConfig) -> (RPeaks, usize) {
    let c = series.n_channels();
    let preferred = config.lead.min(c - 1);
    let peaks = detect_rpeaks(series, preferred, config);
    if peaks.len() >= 2 {
        return (peaks, preferred);
    }
    let widest = (0..c)
        .max_by(|&a, &b| {
            peak_to_peak(series, a)
                .total_cmp(&peak_to_peak(series, b))
                .then(b.cmp(&a))
        })
        .unwrap_or(preferred);
    if widest == preferred {
        return (peaks, preferred);
    }
    let other = detect_rpeaks(series, widest, config);
    if other.len() > peaks.len() {
        (other, widest)
    } else {
        (peaks, preferred)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn impulses(t: usize, at: &[(usize, f32)]) -> Series {
        let mut v = vec![0.0; t];
        for &(i, a) in at {
            v[i] = a;
        }
        Series::from_channel("s", &v).unwrap()
    }

    #[test]
    fn zero_signal_has_no_peaks() {
        let s = Series::from_channel("z", &[0.0; 300]).unwrap();
        assert!(detect_rpeaks(&s, 0, &PeakConfig::default()).is_empty());
    }

    #[test]
    fn impulses_are_found() {
        let s = impulses(600, &[(100, 10.0), (300, 10.0), (500, 10.0)]);
        assert_eq!(
            detect_rpeaks(&s, 0, &PeakConfig::default()).indices(),
            &[100, 300, 500]
        );
    }

    #[test]
    fn refractory_gap_keeps_the_taller_peak() {
        let s = impulses(300, &[(100, 8.0), (105, 10.0)]);
        assert_eq!(
            detect_rpeaks(&s, 0, &PeakConfig::default()).indices(),
            &[105]
        );
    }

    #[test]
    fn falls_back_to_the_widest_lead() {
        let mut v = vec![0.0f32; 2 * 400];
        for p in [50, 150, 250, 350] {
            v[p * 2] = 5.0;
        }
        let s = Series::new("s", 400, 2, v).unwrap();
        let (peaks, lead) = detect_rpeaks_auto(&s, &PeakConfig::default());
        assert_eq!(lead, 0);
        assert_eq!(peaks.indices(), &[50, 150, 250, 350]);
    }

    #[test]
    fn near_checks_both_sides() {
        let p = RPeaks::new(vec![10, 40]);
        assert!(p.near(5, 5) && p.near(15, 5) && p.near(40, 0));
        assert!(!p.near(4, 5) && !p.near(16, 5) && !p.near(46, 5));
    }
}

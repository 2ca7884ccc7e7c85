//! Beat-wise temporal alignment of a prototype to a query.
//!
//! Prototype peaks are paired with query peaks (after evening out the beat
//! counts) and every inter-peak segment is linearly resampled onto the query
//! segment. Sample positions are computed with exact integer ratios, so a
//! segment of equal length is copied verbatim.

use serde::{Deserialize, Serialize};

use super::rpeaks::{detect_rpeaks, detect_rpeaks_auto, PeakConfig, RPeaks};
use crate::data::Series;
use crate::error::{CfxError, Result};

/// A prototype whose beat count has been matched to the query.
#[derive(Clone, Debug, PartialEq)]
pub struct PeakMatch {
    pub series: Series,
    /// Peaks in `series`, paired index by index with `query_peaks`.
    pub proto_peaks: RPeaks,
    pub query_peaks: RPeaks,
    /// Zeros prepended to the prototype.
    pub padded: usize,
    /// Leading prototype beats removed.
    pub trimmed: usize,
    /// Prototype beats lost to the right crop after padding.
    pub dropped: usize,
}

/// Evens out beat counts. A prototype with more beats loses its leading
/// beats; one with fewer beats is shifted right with leading zeros so its
/// first beat lands on the matching query beat, then cropped to
/// `query_len`.
pub fn normalize_peak_count(
    proto: &Series,
    proto_peaks: &RPeaks,
    query_peaks: &RPeaks,
    query_len: usize,
) -> Result<PeakMatch> {
    if query_peaks.is_empty() {
        return Err(CfxError::AlignmentUnavailable(
            "no R-peaks in the query".into(),
        ));
    }
    if proto_peaks.is_empty() {
        return Err(CfxError::AlignmentUnavailable(
            "no R-peaks in the prototype".into(),
        ));
    }
    let p = proto_peaks.indices();
    let q = query_peaks.indices();
    let (np, nq) = (p.len(), q.len());
    let c = proto.n_channels();

    if np == nq {
        return Ok(PeakMatch {
            series: proto.clone(),
            proto_peaks: proto_peaks.clone(),
            query_peaks: query_peaks.clone(),
            padded: 0,
            trimmed: 0,
            dropped: 0,
        });
    }

    if np > nq {
        let d = np - nq;
        let start = (p[d - 1] + p[d]).div_ceil(2).min(proto.n_timesteps() - 2);
        let values = proto.values()[start * c..].to_vec();
        let series = Series::new(proto.record_id(), proto.n_timesteps() - start, c, values)?;
        return Ok(PeakMatch {
            series,
            proto_peaks: RPeaks::new(p[d..].iter().map(|&s| s - start).collect()),
            query_peaks: query_peaks.clone(),
            padded: 0,
            trimmed: d,
            dropped: 0,
        });
    }

    let first = nq - np;
    let offset = q[first].saturating_sub(p[0]);
    let len = (offset + proto.n_timesteps()).min(query_len.max(2));
    let mut values = vec![0f32; offset * c];
    values.extend_from_slice(proto.values());
    values.truncate(len * c);
    let series = Series::new(proto.record_id(), len, c, values)?;
    // a beat on the crop edge would leave nothing to resample after it
    let kept: Vec<usize> = p
        .iter()
        .map(|&s| s + offset)
        .filter(|&s| s + 1 < len)
        .collect();
    if kept.is_empty() {
        return Err(CfxError::AlignmentUnavailable(
            "every prototype beat falls outside the query window".into(),
        ));
    }
    let dropped = np - kept.len();
    Ok(PeakMatch {
        query_peaks: RPeaks::new(q[first..first + kept.len()].to_vec()),
        proto_peaks: RPeaks::new(kept),
        series,
        padded: offset,
        trimmed: 0,
        dropped,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentInfo {
    pub query_lead: usize,
    pub proto_lead: usize,
    pub query_peaks: RPeaks,
    pub proto_peaks: RPeaks,
    /// Matched `(query index, prototype index)` pairs after beat matching.
    pub matched: Vec<(usize, usize)>,
    pub padded: usize,
    pub trimmed: usize,
    pub dropped: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    pub series: Series,
    pub info: AlignmentInfo,
}

/// Position `base + num/den` in the prototype, as an index and remainder.
#[inline]
fn sample_at(x: &[f32], c: usize, ch: usize, base: usize, num: usize, den: usize) -> f32 {
    let i = base + num / den;
    let r = num % den;
    let a = x[i * c + ch];
    if r == 0 {
        return a;
    }
    let b = x[(i + 1) * c + ch];
    (f64::from(a) + (r as f64 / den as f64) * (f64::from(b) - f64::from(a))) as f32
}

/// Piecewise-linear warp of `proto` onto the time grid `0..t_len` through
/// the anchor pairs `(query t, proto s)`; both sequences strictly increase.
pub fn warp(proto: &Series, anchors: &[(usize, usize)], t_len: usize) -> Result<Series> {
    if anchors.is_empty() {
        return Err(CfxError::AlignmentUnavailable("no matched beats".into()));
    }
    let tp = proto.n_timesteps();
    let c = proto.n_channels();
    if anchors.iter().any(|&(t, s)| t >= t_len || s >= tp)
        || anchors
            .windows(2)
            .any(|w| w[1].0 <= w[0].0 || w[1].1 <= w[0].1)
    {
        return Err(CfxError::InvalidArgument(
            "anchors must increase and stay in range".into(),
        ));
    }
    let x = proto.values();
    let (t0, s0) = anchors[0];
    let (tl, sl) = *anchors.last().expect("non-empty");
    let mut out = Vec::with_capacity(t_len * c);
    let mut k = 0;
    for t in 0..t_len {
        // (base, num, den) with position = base + num / den
        let (base, num, den) = if t <= t0 {
            if t == t0 {
                (s0, 0, 1)
            } else {
                (0, t * s0, t0)
            }
        } else if t >= tl {
            if t == tl || t_len - 1 == tl {
                (sl, 0, 1)
            } else {
                (sl, (t - tl) * (tp - 1 - sl), t_len - 1 - tl)
            }
        } else {
            while anchors[k + 1].0 <= t {
                k += 1;
            }
            let (ta, sa) = anchors[k];
            let (tb, sb) = anchors[k + 1];
            (sa, (t - ta) * (sb - sa), tb - ta)
        };
        for ch in 0..c {
            out.push(sample_at(x, c, ch, base, num, den));
        }
    }
    Series::new(proto.record_id(), t_len, c, out)
}

/// Warps `proto` so its R-peaks land on the query's.
pub fn align_prototype(proto: &Series, query: &Series, config: &PeakConfig) -> Result<Alignment> {
    if proto.n_channels() != query.n_channels() {
        return Err(CfxError::Shape {
            expected: format!("{} channels", query.n_channels()),
            got: format!("{} channels", proto.n_channels()),
        });
    }
    let (query_peaks, query_lead) = detect_rpeaks_auto(query, config);
    if query_peaks.is_empty() {
        return Err(CfxError::AlignmentUnavailable(
            "no R-peaks in the query".into(),
        ));
    }
    let mut proto_lead = query_lead;
    let mut proto_peaks = detect_rpeaks(proto, query_lead, config);
    if proto_peaks.len() < 2 {
        let (p, lead) = detect_rpeaks_auto(proto, config);
        if p.len() > proto_peaks.len() {
            proto_peaks = p;
            proto_lead = lead;
        }
    }
    let m = normalize_peak_count(proto, &proto_peaks, &query_peaks, query.n_timesteps())?;
    let matched: Vec<(usize, usize)> = m
        .query_peaks
        .indices()
        .iter()
        .copied()
        .zip(m.proto_peaks.indices().iter().copied())
        .collect();
    let series = warp(&m.series, &matched, query.n_timesteps())?;
    Ok(Alignment {
        series,
        info: AlignmentInfo {
            query_lead,
            proto_lead,
            query_peaks,
            proto_peaks,
            matched,
            padded: m.padded,
            trimmed: m.trimmed,
            dropped: m.dropped,
        },
    })
}

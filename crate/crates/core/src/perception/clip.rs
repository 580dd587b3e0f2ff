//! Frame-sampling plans over time intervals.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PerceptionError;
use crate::backend::{ImageRef, ImageSource};
use crate::warning::Warning;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub intervals: Vec<[f64; 2]>,
    pub frame_timestamps_s: Vec<f64>,
}

impl ClipSpec {
    pub fn len(&self) -> usize {
        self.frame_timestamps_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_timestamps_s.is_empty()
    }
}

/// `n` midpoint samples over `[0, duration]`: `(i + 0.5) · D / n`.
pub fn uniform_clip(video_duration_s: f64, n: usize) -> Result<ClipSpec, PerceptionError> {
    if !(video_duration_s.is_finite() && video_duration_s > 0.0) {
        return Err(PerceptionError::NonPositiveDuration(video_duration_s));
    }
    if n == 0 {
        return Err(PerceptionError::ZeroFrameBudget);
    }
    Ok(ClipSpec {
        intervals: vec![[0.0, video_duration_s]],
        frame_timestamps_s: midpoints(0.0, video_duration_s, n),
    })
}

fn midpoints(start: f64, end: f64, n: usize) -> Vec<f64> {
    let len = end - start;
    (0..n).map(|j| start + (j as f64 + 0.5) * len / n as f64).collect()
}

/// Spreads `max_frames` over the spans in proportion to their length, at
/// least one per span. With more spans than frames the shortest spans are
/// dropped (later ones first among equals) and a warning is returned.
pub fn derive_clip(
    spans: &[[f64; 2]],
    max_frames: usize,
    video_duration_s: f64,
) -> Result<(ClipSpec, Option<Warning>), PerceptionError> {
    if max_frames == 0 {
        return Err(PerceptionError::ZeroFrameBudget);
    }
    if !(video_duration_s.is_finite() && video_duration_s >= 0.0) {
        return Err(PerceptionError::NonPositiveDuration(video_duration_s));
    }
    let mut clamped = Vec::with_capacity(spans.len());
    for &[s, e] in spans {
        if !(s.is_finite() && e.is_finite() && s <= e) {
            return Err(PerceptionError::InvalidSpan([s, e]));
        }
        clamped.push([s.clamp(0.0, video_duration_s), e.clamp(0.0, video_duration_s)]);
    }
    let mut spans = merge_overlapping(clamped);

    let mut warning = None;
    if spans.len() > max_frames {
        let dropped = spans.len() - max_frames;
        let mut order: Vec<usize> = (0..spans.len()).collect();
        // longest first; earlier wins ties
        order.sort_by(|&a, &b| width(spans[b]).total_cmp(&width(spans[a])).then(a.cmp(&b)));
        let mut keep = order[..max_frames].to_vec();
        keep.sort_unstable();
        spans = keep.into_iter().map(|i| spans[i]).collect();
        warning = Some(Warning::BudgetTooSmall { dropped_spans: dropped });
    }

    let alloc = allocate(&spans, max_frames);
    let mut timestamps: Vec<f64> = spans
        .iter()
        .zip(&alloc)
        .flat_map(|(&[s, e], &n)| midpoints(s, e, n))
        .collect();
    timestamps.dedup();
    Ok((
        ClipSpec {
            intervals: spans,
            frame_timestamps_s: timestamps,
        },
        warning,
    ))
}

fn width(span: [f64; 2]) -> f64 {
    span[1] - span[0]
}

fn merge_overlapping(mut spans: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    spans.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let mut out: Vec<[f64; 2]> = Vec::with_capacity(spans.len());
    for s in spans {
        match out.last_mut() {
            Some(last) if s[0] < last[1] || s == *last => last[1] = last[1].max(s[1]),
            _ => out.push(s),
        }
    }
    out
}

/// Frames per span: `max(1, ⌊F · len / total⌋)`, remainder one at a time to
/// the longest spans. Zero-width spans always get exactly one.
pub(crate) fn allocate(spans: &[[f64; 2]], budget: usize) -> Vec<usize> {
    let total: f64 = spans.iter().map(|&s| width(s)).sum();
    if total <= 0.0 {
        return vec![1; spans.len()];
    }
    let mut alloc: Vec<usize> = spans
        .iter()
        .map(|&s| ((budget as f64 * width(s) / total).floor() as usize).max(1))
        .collect();
    let mut by_width: Vec<usize> = (0..spans.len()).filter(|&i| width(spans[i]) > 0.0).collect();
    by_width.sort_by(|&a, &b| width(spans[b]).total_cmp(&width(spans[a])).then(a.cmp(&b)));

    // floors of one can overshoot the budget; take back from the largest
    while alloc.iter().sum::<usize>() > budget {
        let Some(i) = (0..alloc.len()).filter(|&i| alloc[i] > 1).max_by_key(|&i| (alloc[i], usize::MAX - i)) else {
            break;
        };
        alloc[i] -= 1;
    }
    let mut remainder = budget.saturating_sub(alloc.iter().sum());
    while remainder > 0 && !by_width.is_empty() {
        for &i in &by_width {
            if remainder == 0 {
                break;
            }
            alloc[i] += 1;
            remainder -= 1;
        }
    }
    alloc
}

/// One frame to extract: where in the video and where to write the image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameGrab {
    pub timestamp_s: f64,
    pub image_path: PathBuf,
}

/// Maps each timestamp to `frame_NNNN_<ms>ms.jpg` under `out_dir`.
pub fn frame_plan(clip: &ClipSpec, out_dir: &Path) -> Vec<FrameGrab> {
    clip.frame_timestamps_s
        .iter()
        .enumerate()
        .map(|(i, &t)| FrameGrab {
            timestamp_s: t,
            image_path: out_dir.join(format!("frame_{i:04}_{}ms.jpg", (t * 1000.0).round() as u64)),
        })
        .collect()
}

/// Shell command for an external grabber (ffmpeg), one per frame.
pub fn grab_command(video: &Path, grab: &FrameGrab) -> String {
    format!(
        "ffmpeg -loglevel error -y -ss {:.3} -i {} -frames:v 1 {}",
        grab.timestamp_s,
        shell_quote(&video.display().to_string()),
        shell_quote(&grab.image_path.display().to_string())
    )
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

/// Image parts for the reasoner, in timestamp order.
pub fn image_refs(plan: &[FrameGrab]) -> Vec<ImageRef> {
    plan.iter()
        .map(|g| ImageRef {
            source: ImageSource::Uri {
                uri: format!("file://{}", g.image_path.display()),
            },
            timestamp_s: g.timestamp_s,
        })
        .collect()
}

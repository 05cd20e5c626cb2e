//! Envelope peak picking and the audio/video peak IoU.

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PeakList {
    pub times: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakConfig {
    pub min_prominence: f64,
    pub min_separation: f64,
}

impl Default for PeakConfig {
    /// Tuned for envelopes scaled to a maximum of 1.
    fn default() -> Self {
        Self { min_prominence: 0.25, min_separation: 0.1 }
    }
}

pub const DEFAULT_WINDOW_S: f64 = 0.1;

fn prominence(e: &[f32], i: usize) -> f64 {
    let h = e[i];
    let mut left_min = h;
    for &v in e[..i].iter().rev() {
        if v > h {
            break;
        }
        left_min = left_min.min(v);
    }
    let mut right_min = h;
    for &v in &e[i + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    (h - left_min.max(right_min)) as f64
}

/// Local maxima (first index of a plateau) whose topographic prominence
/// reaches `min_prominence`; peaks closer than `min_separation` seconds to
/// a taller kept peak are dropped. Endpoints are never peaks.
pub fn detect_peaks(envelope: &[f32], frame_rate: f64, min_prominence: f64, min_separation: f64) -> PeakList {
    let n = envelope.len();
    if n < 3 {
        return PeakList::default();
    }
    let mut cands = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if envelope[i] > envelope[i - 1] {
            let mut j = i;
            while j + 1 < n && envelope[j + 1] == envelope[i] {
                j += 1;
            }
            if j + 1 < n && envelope[j + 1] < envelope[i] && prominence(envelope, i) >= min_prominence {
                cands.push(i);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    cands.sort_by(|&a, &b| envelope[b].total_cmp(&envelope[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for c in cands {
        let tc = c as f64 / frame_rate;
        if kept.iter().all(|&k| (k as f64 / frame_rate - tc).abs() >= min_separation) {
            kept.push(c);
        }
    }
    kept.sort_unstable();
    PeakList { times: kept.into_iter().map(|k| k as f64 / frame_rate).collect() }
}

/// Peaks of an envelope rescaled to a maximum of 1, with default settings.
pub fn envelope_peaks(envelope: &[f32], frame_rate: f64) -> PeakList {
    let max = envelope.iter().cloned().fold(0.0f32, f32::max);
    if max <= 0.0 {
        return PeakList::default();
    }
    let scaled: Vec<f32> = envelope.iter().map(|&x| x / max).collect();
    let cfg = PeakConfig::default();
    detect_peaks(&scaled, frame_rate, cfg.min_prominence, cfg.min_separation)
}

/// Two-pointer greedy matching in time order, then `M / (|A| + |V| − M)`.
pub fn av_align(audio: &PeakList, video: &PeakList, window: f64) -> f64 {
    let (a, v) = (&audio.times, &video.times);
    if a.is_empty() && v.is_empty() {
        return 1.0;
    }
    let (mut i, mut j, mut m) = (0, 0, 0usize);
    while i < a.len() && j < v.len() {
        if (a[i] - v[j]).abs() <= window {
            m += 1;
            i += 1;
            j += 1;
        } else if a[i] < v[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    m as f64 / (a.len() + v.len() - m) as f64
}

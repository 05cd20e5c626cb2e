use crate::numerics::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct VideoFeatureSeq {
    /// `[N, d_v]`
    pub frames: Tensor,
    pub fps: f64,
}

impl VideoFeatureSeq {
    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Keeps frames `0, stride, 2·stride, …`.
pub fn subsample_frames(video: &VideoFeatureSeq, stride: usize) -> VideoFeatureSeq {
    let stride = stride.max(1);
    let keep: Vec<usize> = (0..video.len()).step_by(stride).collect();
    VideoFeatureSeq { frames: take_rows(&video.frames, &keep), fps: video.fps / stride as f64 }
}

/// Nearest-neighbour source index for each of `target_len` outputs:
/// `round(t·(n−1)/(target_len−1))`, rounding halves up.
pub fn nearest_indices(n: usize, target_len: usize) -> Vec<usize> {
    if n <= 1 || target_len <= 1 {
        return vec![0; target_len];
    }
    let (num, den) = (n - 1, target_len - 1);
    (0..target_len).map(|t| (2 * t * num + den) / (2 * den)).collect()
}

pub fn take_rows(src: &Tensor, idx: &[usize]) -> Tensor {
    let c = src.cols();
    let mut data = Vec::with_capacity(idx.len() * c);
    for &i in idx {
        data.extend_from_slice(src.row(i));
    }
    Tensor::new([idx.len(), c], data).expect("row gather shape")
}

pub fn resample_video(video: &VideoFeatureSeq, target_len: usize) -> Tensor {
    take_rows(&video.frames, &nearest_indices(video.len(), target_len))
}

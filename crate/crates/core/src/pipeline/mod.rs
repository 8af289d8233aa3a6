//! Construction of model-ready shot samples from annotations, modality
//! sidecars and pixel clips, plus the synthetic corpus generator used for
//! desk-scale training.

mod clip;
mod modality;
mod sample;
mod split;
pub mod synth;
mod vocab;

pub use clip::{Clip, ClipSource, RallyClip, CLIP_MAGIC};
pub use modality::{
    position_from_bbox, BBox, FrameModalities, ModalitySidecar, ModalityWindow, PlayerObservation,
    PlayerPair,
};
pub use sample::{
    build_sample, SampleOptions, ShotSample, MAX_CAPTION_TOKENS, MAX_MISSING_PLAYER_FRAMES,
    WINDOW_LEN,
};
pub use split::{split_counts, split_dataset, Split, DEFAULT_RATIOS};
pub use vocab::{caption_pieces, join_pieces, Vocabulary, BOS, EOS, PAD, PLAYER_TOKEN, UNK};

use crate::annotation::Frame;

/// Frames before the hit included in a clip window.
pub const PRE_HIT: u64 = 3;
/// Frames after the hit included in a clip window.
pub const POST_HIT: u64 = 12;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("degenerate bounding box {0:?}")]
    DegenerateBox(BBox),
    #[error("rally {rally_id} hit #{hit_index}: player box missing on {missing} of 16 frames")]
    ModalityGap {
        rally_id: String,
        hit_index: usize,
        missing: usize,
    },
    #[error("clip does not match window: {0}")]
    ClipMismatch(String),
    #[error("caption has {0} tokens, limit is 120")]
    CaptionTooLong(usize),
    #[error("missing annotation: {0}")]
    MissingAnnotation(String),
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("split ratios ({0}, {1}, {2}) must be non-negative and sum to 1")]
    InvalidRatios(f64, f64, f64),
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The 16 frame indices `[hit-3 ..= hit+12]` around a hit, clamped to the
/// inclusive segment bounds (edge frames repeat near a boundary).
pub fn clip_window(hit_frame: Frame, seg_start: Frame, seg_end: Frame) -> [Frame; WINDOW_LEN] {
    let mut out = [0; WINDOW_LEN];
    for (i, f) in out.iter_mut().enumerate() {
        let raw = hit_frame as i128 - PRE_HIT as i128 + i as i128;
        *f = raw.clamp(seg_start as i128, seg_end as i128) as Frame;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wide_bounds() {
        let w = clip_window(100, 0, 10_000);
        assert_eq!(w.to_vec(), (97..=112).collect::<Vec<u64>>());
        assert_eq!(w[3], 100);
    }

    #[test]
    fn clamps_at_start() {
        let w = clip_window(1, 0, 500);
        assert_eq!(
            w.to_vec(),
            vec![0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13]
        );
    }

    #[test]
    fn clamps_at_end() {
        let w = clip_window(200, 100, 200);
        assert!(w[4..].iter().all(|&f| f == 200));
        assert_eq!(&w[..4], &[197, 198, 199, 200]);
    }

    proptest! {
        #[test]
        fn always_sixteen_monotone_in_bounds(start in 0u64..1000, len in 0u64..100, off in 0u64..100) {
            let end = start + len;
            let hit = start + off.min(len);
            let w = clip_window(hit, start, end);
            prop_assert_eq!(w.len(), 16);
            prop_assert!(w.windows(2).all(|p| p[0] <= p[1]));
            prop_assert!(w.iter().all(|f| (start..=end).contains(f)));
        }
    }
}

use super::{
    clip_window, Clip, ClipSource, ModalitySidecar, ModalityWindow, PipelineError, Vocabulary,
};
use crate::annotation::{
    derive_semantic_vector, Frame, Lexicon, MatchRecord, PlayerSlot, SemanticVector, ShotType,
};

pub const WINDOW_LEN: usize = 16;
pub const MAX_CAPTION_TOKENS: usize = 120;
/// A sample is rejected when either player box is missing on more window frames than this.
pub const MAX_MISSING_PLAYER_FRAMES: usize = 8;

/// One model-ready shot: 16-frame clip, modality features, tokenized caption
/// and semantic target.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotSample {
    pub match_id: String,
    pub rally_id: String,
    pub hit_index: usize,
    pub frame_window: [Frame; WINDOW_LEN],
    pub clip: Clip,
    pub modalities: ModalityWindow,
    pub caption: String,
    pub caption_tokens: Vec<u32>,
    pub shot_type: ShotType,
    pub semantic_target: SemanticVector,
}

impl ShotSample {
    /// Checks the structural invariants of a sample.
    pub fn check(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::InvalidSample(m));
        if self.clip.t != WINDOW_LEN || self.modalities.frames() != WINDOW_LEN {
            return bad(format!(
                "window must have {WINDOW_LEN} frames (clip {}, modalities {})",
                self.clip.t,
                self.modalities.frames()
            ));
        }
        if self.frame_window.windows(2).any(|w| w[1] < w[0]) {
            return bad("frame window is not monotone".into());
        }
        let toks = &self.caption_tokens;
        if toks.first() != Some(&super::BOS) || toks.last() != Some(&super::EOS) || toks.len() < 2 {
            return bad("caption tokens must start with BOS and end with EOS".into());
        }
        if toks.len() > MAX_CAPTION_TOKENS {
            return bad(format!(
                "{} caption tokens exceed {MAX_CAPTION_TOKENS}",
                toks.len()
            ));
        }
        if !self.semantic_target.is_well_formed()
            || self.semantic_target.shot_category() != Some(self.shot_type)
        {
            return bad("semantic target inconsistent with shot type".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SampleOptions {
    pub pose_keypoints: usize,
    /// Source frame size used when the sidecar does not carry one.
    pub frame_size: Option<[f64; 2]>,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self {
            pose_keypoints: 17,
            frame_size: None,
        }
    }
}

/// Builds the sample of hit `hit_index` in rally `rally_index` of `m`.
#[allow(clippy::too_many_arguments)]
pub fn build_sample(
    m: &MatchRecord,
    rally_index: usize,
    hit_index: usize,
    sidecar: &ModalitySidecar,
    clips: &dyn ClipSource,
    vocab: &Vocabulary,
    lexicon: &Lexicon,
    opts: &SampleOptions,
) -> Result<ShotSample, PipelineError> {
    let rally = m
        .rallies
        .get(rally_index)
        .ok_or_else(|| PipelineError::MissingAnnotation(format!("rally #{rally_index}")))?;
    let hit = rally.hits.get(hit_index).ok_or_else(|| {
        PipelineError::MissingAnnotation(format!("hit #{hit_index} of {}", rally.rally_id))
    })?;
    let span = m.rally_span(rally_index).ok_or_else(|| {
        PipelineError::MissingAnnotation(format!("segment of {}", rally.rally_id))
    })?;
    let window = clip_window(hit.frame, span.start_frame, span.end_frame);

    for slot in [PlayerSlot::Near, PlayerSlot::Far] {
        let missing = ModalityWindow::count_missing(sidecar, &window, slot);
        if missing > MAX_MISSING_PLAYER_FRAMES {
            return Err(PipelineError::ModalityGap {
                rally_id: rally.rally_id.clone(),
                hit_index,
                missing,
            });
        }
    }
    let clip = clips.frames(&window)?;
    let frame_size = sidecar
        .frame_size
        .or(opts.frame_size)
        .unwrap_or([clip.w as f64, clip.h as f64]);
    let modalities =
        ModalityWindow::from_sidecar(sidecar, &window, frame_size, opts.pose_keypoints)?;

    let caption_tokens = vocab.tokenize(&hit.shot.caption);
    if caption_tokens.len() > MAX_CAPTION_TOKENS {
        return Err(PipelineError::CaptionTooLong(caption_tokens.len()));
    }
    let semantic_target = derive_semantic_vector(&hit.shot, lexicon);
    let sample = ShotSample {
        match_id: m.match_id.clone(),
        rally_id: rally.rally_id.clone(),
        hit_index,
        frame_window: window,
        clip,
        modalities,
        caption: hit.shot.caption.clone(),
        caption_tokens,
        shot_type: hit.shot.shot_type,
        semantic_target,
    };
    sample.check()?;
    Ok(sample)
}

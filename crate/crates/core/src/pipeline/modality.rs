use super::PipelineError;
use crate::annotation::{Frame, PlayerSlot};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::collections::BTreeMap;

/// Player bounding box in pixels, `(x1, y1, x2, y2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(a: [f64; 4]) -> Self {
        BBox {
            x1: a[0],
            y1: a[1],
            x2: a[2],
            y2: a[3],
        }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }
}

/// Court position of a player: the center of the bottom edge of the box.
pub fn position_from_bbox(b: &BBox) -> Result<[f64; 2], PipelineError> {
    if b.x1 > b.x2 || b.y1 > b.y2 {
        return Err(PipelineError::DegenerateBox(*b));
    }
    Ok([(b.x1 + b.x2) / 2.0, b.y2])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerObservation {
    pub bbox: BBox,
    /// Keypoints in pixels.
    pub pose: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlayerPair {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub near: Option<PlayerObservation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub far: Option<PlayerObservation>,
}

impl PlayerPair {
    pub fn get(&self, slot: PlayerSlot) -> Option<&PlayerObservation> {
        match slot {
            PlayerSlot::Near => self.near.as_ref(),
            PlayerSlot::Far => self.far.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameModalities {
    pub frame: Frame,
    #[serde(default)]
    pub players: PlayerPair,
    /// `None` when the shuttle was not detected in this frame.
    pub shuttle: Option<[f64; 2]>,
}

/// Per-rally sidecar of precomputed modality tracks, keyed by frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalitySidecar {
    pub rally_id: String,
    /// Source frame size `[width, height]` in pixels, used for normalization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_size: Option<[f64; 2]>,
    pub frames: Vec<FrameModalities>,
    #[serde(flatten)]
    pub extras: Map<String, Value>,
}

impl ModalitySidecar {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Malformed(format!("sidecar: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("sidecars always serialize")
    }

    pub fn by_frame(&self) -> BTreeMap<Frame, &FrameModalities> {
        self.frames.iter().map(|f| (f.frame, f)).collect()
    }
}

/// Modality features of one clip window in normalized image coordinates
/// (pixels divided by the source frame size). Missing observations are zero
/// in the feature arrays and flagged in the masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityWindow {
    /// Per frame: near `(x, y)` then far `(x, y)` court positions.
    pub positions: Vec<[f64; 4]>,
    /// Per frame: near keypoints then far keypoints, flattened `(x, y)` pairs.
    pub poses: Vec<Vec<f64>>,
    pub shuttle: Vec<[f64; 2]>,
    /// Either player's box is missing in this frame.
    pub player_missing: Vec<bool>,
    pub shuttle_missing: Vec<bool>,
}

impl ModalityWindow {
    pub fn frames(&self) -> usize {
        self.positions.len()
    }

    pub fn pose_dim(&self) -> usize {
        self.poses.first().map_or(0, Vec::len)
    }

    /// Builds the window features for `window` frames from a sidecar.
    pub fn from_sidecar(
        sidecar: &ModalitySidecar,
        window: &[Frame],
        frame_size: [f64; 2],
        pose_keypoints: usize,
    ) -> Result<Self, PipelineError> {
        let by_frame = sidecar.by_frame();
        let [fw, fh] = frame_size;
        let mut w = ModalityWindow {
            positions: Vec::with_capacity(window.len()),
            poses: Vec::with_capacity(window.len()),
            shuttle: Vec::with_capacity(window.len()),
            player_missing: Vec::with_capacity(window.len()),
            shuttle_missing: Vec::with_capacity(window.len()),
        };
        for f in window {
            let fm = by_frame.get(f);
            let mut pos = [0.0; 4];
            let mut pose = vec![0.0; 4 * pose_keypoints];
            let mut missing = false;
            for (slot_i, slot) in [PlayerSlot::Near, PlayerSlot::Far].into_iter().enumerate() {
                match fm.and_then(|fm| fm.players.get(slot)) {
                    Some(obs) => {
                        let [x, y] = position_from_bbox(&obs.bbox)?;
                        pos[2 * slot_i] = x / fw;
                        pos[2 * slot_i + 1] = y / fh;
                        if obs.pose.len() != pose_keypoints {
                            return Err(PipelineError::Malformed(format!(
                                "frame {f}: expected {pose_keypoints} keypoints, found {}",
                                obs.pose.len()
                            )));
                        }
                        let off = slot_i * 2 * pose_keypoints;
                        for (k, [x, y]) in obs.pose.iter().enumerate() {
                            pose[off + 2 * k] = x / fw;
                            pose[off + 2 * k + 1] = y / fh;
                        }
                    }
                    None => missing = true,
                }
            }
            let shuttle = fm.and_then(|fm| fm.shuttle);
            w.positions.push(pos);
            w.poses.push(pose);
            w.player_missing.push(missing);
            w.shuttle_missing.push(shuttle.is_none());
            w.shuttle
                .push(shuttle.map_or([0.0, 0.0], |[x, y]| [x / fw, y / fh]));
        }
        Ok(w)
    }

    /// Number of window frames where the given player's box is absent.
    pub fn count_missing(sidecar: &ModalitySidecar, window: &[Frame], slot: PlayerSlot) -> usize {
        let by_frame = sidecar.by_frame();
        window
            .iter()
            .filter(|f| {
                by_frame
                    .get(f)
                    .and_then(|fm| fm.players.get(slot))
                    .is_none()
            })
            .count()
    }
}

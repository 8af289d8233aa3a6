use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};
use std::fmt;

/// Frame index into the broadcast video.
pub type Frame = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discipline {
    Singles,
    Doubles,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Rally,
    Replay,
    Hawkeye,
}

/// Court side of a player in the fixed broadcast layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlayerSlot {
    Near,
    Far,
}

impl PlayerSlot {
    pub fn other(self) -> Self {
        match self {
            PlayerSlot::Near => PlayerSlot::Far,
            PlayerSlot::Far => PlayerSlot::Near,
        }
    }
}

/// The closed set of twelve stroke categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotType {
    Serve,
    LongServe,
    Smash,
    Clear,
    Drop,
    Push,
    NetShot,
    NetKill,
    Lift,
    Drive,
    Block,
    Press,
}

impl ShotType {
    pub const ALL: [ShotType; 12] = [
        ShotType::Serve,
        ShotType::LongServe,
        ShotType::Smash,
        ShotType::Clear,
        ShotType::Drop,
        ShotType::Push,
        ShotType::NetShot,
        ShotType::NetKill,
        ShotType::Lift,
        ShotType::Drive,
        ShotType::Block,
        ShotType::Press,
    ];

    /// Position in [`ShotType::ALL`], which is also the semantic category bit.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ShotType::Serve => "serve",
            ShotType::LongServe => "long_serve",
            ShotType::Smash => "smash",
            ShotType::Clear => "clear",
            ShotType::Drop => "drop",
            ShotType::Push => "push",
            ShotType::NetShot => "net_shot",
            ShotType::NetKill => "net_kill",
            ShotType::Lift => "lift",
            ShotType::Drive => "drive",
            ShotType::Block => "block",
            ShotType::Press => "press",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for ShotType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub start_frame: Frame,
    /// Inclusive last frame of the segment.
    pub end_frame: Frame,
    #[serde(flatten)]
    pub extras: Map<String, Value>,
}

impl Segment {
    pub fn new(kind: SegmentKind, start_frame: Frame, end_frame: Frame) -> Self {
        Self {
            kind,
            start_frame,
            end_frame,
            extras: Map::new(),
        }
    }

    pub fn contains(&self, frame: Frame) -> bool {
        self.start_frame <= frame && frame <= self.end_frame
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotAnnotation {
    pub shot_type: ShotType,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic_target: Option<super::SemanticVector>,
    #[serde(flatten)]
    pub extras: Map<String, Value>,
}

impl ShotAnnotation {
    pub fn new(shot_type: ShotType, caption: impl Into<String>) -> Self {
        Self {
            shot_type,
            caption: caption.into(),
            semantic_target: None,
            extras: Map::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitEvent {
    pub frame: Frame,
    pub player_slot: PlayerSlot,
    pub shot: ShotAnnotation,
    #[serde(flatten)]
    pub extras: Map<String, Value>,
}

impl HitEvent {
    pub fn new(frame: Frame, player_slot: PlayerSlot, shot: ShotAnnotation) -> Self {
        Self {
            frame,
            player_slot,
            shot,
            extras: Map::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RallyRecord {
    pub rally_id: String,
    pub hits: Vec<HitEvent>,
    #[serde(default)]
    pub net_hits: Vec<Frame>,
    /// Shuttle landing frames. A clean rally has at most one; the wire format
    /// is `int | null`, with an array accepted so that faulty annotations with
    /// several landings survive parsing and get reported by the validator.
    #[serde(default, rename = "landing", with = "landing_repr")]
    pub landings: Vec<Frame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub winner_side: Option<PlayerSlot>,
    #[serde(flatten)]
    pub extras: Map<String, Value>,
}

impl RallyRecord {
    pub fn new(rally_id: impl Into<String>) -> Self {
        Self {
            rally_id: rally_id.into(),
            hits: Vec::new(),
            net_hits: Vec::new(),
            landings: Vec::new(),
            winner_side: None,
            extras: Map::new(),
        }
    }

    pub fn landing(&self) -> Option<Frame> {
        self.landings.first().copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub match_id: String,
    pub discipline: Discipline,
    pub fps: f64,
    pub total_frames: u64,
    pub segments: Vec<Segment>,
    pub rallies: Vec<RallyRecord>,
    #[serde(flatten)]
    pub extras: Map<String, Value>,
}

impl MatchRecord {
    pub fn duration_seconds(&self) -> f64 {
        self.total_frames as f64 / self.fps
    }

    /// Segments of kind `rally`, in document order.
    pub fn rally_segments(&self) -> impl Iterator<Item = &Segment> {
        self.segments
            .iter()
            .filter(|s| s.kind == SegmentKind::Rally)
    }

    /// The segment spanning the `i`-th rally record. Rally records map onto
    /// rally segments by ordinal position.
    pub fn rally_span(&self, rally_index: usize) -> Option<&Segment> {
        self.rally_segments().nth(rally_index)
    }

    pub fn rally_with_span(&self) -> impl Iterator<Item = (&RallyRecord, Option<&Segment>)> {
        let mut spans = self.rally_segments();
        self.rallies.iter().map(move |r| (r, spans.next()))
    }

    pub fn hit_count(&self) -> usize {
        self.rallies.iter().map(|r| r.hits.len()).sum()
    }
}

mod landing_repr {
    use super::Frame;
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        One(Frame),
        Many(Vec<Frame>),
    }

    pub fn serialize<S: Serializer>(v: &[Frame], s: S) -> Result<S::Ok, S::Error> {
        match v {
            [] => s.serialize_none(),
            [one] => one.serialize(s),
            many => many.serialize(s),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Frame>, D::Error> {
        let v: Option<serde_json::Value> = Option::deserialize(d)?;
        match v {
            None => Ok(Vec::new()),
            Some(v) => match serde_json::from_value::<Repr>(v) {
                Ok(Repr::One(f)) => Ok(vec![f]),
                Ok(Repr::Many(fs)) => Ok(fs),
                Err(_) => Err(D::Error::custom(
                    "landing must be a non-negative frame index, an array of them, or null",
                )),
            },
        }
    }
}

/// Fixed-width bit vector of semantic attributes:
/// `[12 shot categories | 4 trajectory | 3 court regions | 3 tactical intents]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct SemanticVector {
    bits: [bool; SEMANTIC_DIM],
}

pub const SEMANTIC_DIM: usize = 22;

/// Attribute groups of the semantic vector, as half-open index ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeGroup {
    ShotCategory,
    Trajectory,
    CourtRegion,
    TacticalIntent,
}

impl AttributeGroup {
    pub const ALL: [AttributeGroup; 4] = [
        AttributeGroup::ShotCategory,
        AttributeGroup::Trajectory,
        AttributeGroup::CourtRegion,
        AttributeGroup::TacticalIntent,
    ];

    pub fn range(self) -> std::ops::Range<usize> {
        match self {
            AttributeGroup::ShotCategory => 0..12,
            AttributeGroup::Trajectory => 12..16,
            AttributeGroup::CourtRegion => 16..19,
            AttributeGroup::TacticalIntent => 19..22,
        }
    }
}

/// Attribute names in bit order.
pub const ATTRIBUTE_NAMES: [&str; SEMANTIC_DIM] = [
    "serve",
    "long_serve",
    "smash",
    "clear",
    "drop",
    "push",
    "net_shot",
    "net_kill",
    "lift",
    "drive",
    "block",
    "press",
    "high_upward_arc",
    "downward_steep",
    "flat_horizontal",
    "soft_gentle_controlled",
    "forecourt",
    "mid_court",
    "backcourt",
    "attack_aggressive_finish",
    "defensive_recover_reset",
    "pressure_disrupt",
];

impl SemanticVector {
    pub fn zeros() -> Self {
        Self::default()
    }

    pub fn from_bits(bits: [bool; SEMANTIC_DIM]) -> Self {
        Self { bits }
    }

    /// Vector with only the shot-category bit set.
    pub fn for_shot(shot: ShotType) -> Self {
        let mut v = Self::zeros();
        v.bits[shot.index()] = true;
        v
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn set(&mut self, i: usize, on: bool) {
        self.bits[i] = on;
    }

    pub fn bits(&self) -> &[bool; SEMANTIC_DIM] {
        &self.bits
    }

    pub fn count_in(&self, group: AttributeGroup) -> usize {
        self.bits[group.range()].iter().filter(|b| **b).count()
    }

    pub fn shot_category(&self) -> Option<ShotType> {
        let cats = &self.bits[AttributeGroup::ShotCategory.range()];
        if cats.iter().filter(|b| **b).count() != 1 {
            return None;
        }
        cats.iter().position(|b| *b).and_then(ShotType::from_index)
    }

    /// Exactly one category bit and at most one court-region bit.
    pub fn is_well_formed(&self) -> bool {
        self.count_in(AttributeGroup::ShotCategory) == 1
            && self.count_in(AttributeGroup::CourtRegion) <= 1
    }

    pub fn to_f64(&self) -> [f64; SEMANTIC_DIM] {
        self.bits.map(|b| if b { 1.0 } else { 0.0 })
    }

    pub fn active_names(&self) -> Vec<&'static str> {
        (0..SEMANTIC_DIM)
            .filter(|&i| self.bits[i])
            .map(|i| ATTRIBUTE_NAMES[i])
            .collect()
    }
}

impl Serialize for SemanticVector {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let ints: Vec<u8> = self.bits.iter().map(|&b| b as u8).collect();
        ints.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SemanticVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let ints: Vec<u8> = Vec::deserialize(d)?;
        if ints.len() != SEMANTIC_DIM {
            return Err(D::Error::invalid_length(
                ints.len(),
                &"22 semantic attribute flags",
            ));
        }
        let mut bits = [false; SEMANTIC_DIM];
        for (i, v) in ints.into_iter().enumerate() {
            bits[i] = match v {
                0 => false,
                1 => true,
                _ => return Err(D::Error::custom("semantic flags must be 0 or 1")),
            };
        }
        Ok(Self { bits })
    }
}

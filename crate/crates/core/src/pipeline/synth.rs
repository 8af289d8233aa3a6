//! Deterministic synthetic corpora.
//!
//! Every synthetic shot gets a shot type, a parametric shuttle flight driven
//! by that type, smoothly drifting players, a rendered pixel clip (bright
//! shuttle blob over a dark court) and a caption drawn from a small template
//! grammar whose keywords agree with the semantic target.

use super::{
    build_sample, BBox, Clip, ClipSource, FrameModalities, ModalitySidecar, PipelineError,
    PlayerObservation, PlayerPair, RallyClip, SampleOptions, ShotSample, Vocabulary,
};
use crate::annotation::{
    AttributeGroup, Discipline, Frame, HitEvent, Lexicon, MatchRecord, PlayerSlot, RallyRecord,
    Segment, SegmentKind, SemanticVector, ShotAnnotation, ShotType,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// One grammar entry per shot type: action phrases and the attribute indices
/// (within their group) a caption of that type may mention.
pub struct ShotGrammar {
    pub shot: ShotType,
    pub actions: &'static [&'static str],
    pub trajectories: &'static [usize],
    pub regions: &'static [usize],
    pub intents: &'static [usize],
}

pub const TRAJECTORY_PHRASES: [&[&str]; 4] = [
    &["on a high arcing path", "with a high upward flight"],
    &["with a steep downward angle", "steeply into the floor"],
    &["on a flat fast line", "with a flat horizontal path"],
    &["with a soft controlled touch", "with a gentle touch"],
];

pub const REGION_PHRASES: [&[&str]; 3] = [
    &["into the forecourt", "near the net"],
    &["toward the mid-court", "into the middle of the court"],
    &["deep into the backcourt", "toward the baseline"],
];

pub const INTENT_PHRASES: [&[&str]; 3] = [
    &[
        "to attack and finish the point",
        "as an aggressive finishing attempt",
    ],
    &["to recover and reset the exchange", "as a defensive reset"],
    &[
        "to keep pressure on the opponent",
        "to disrupt the opponent rhythm",
    ],
];

pub const GRAMMAR: [ShotGrammar; 12] = [
    ShotGrammar {
        shot: ShotType::Serve,
        actions: &["serves", "starts the rally with a short serve"],
        trajectories: &[3],
        regions: &[0],
        intents: &[1, 2],
    },
    ShotGrammar {
        shot: ShotType::LongServe,
        actions: &["plays a long serve", "sends a long serve"],
        trajectories: &[0],
        regions: &[2],
        intents: &[2, 1],
    },
    ShotGrammar {
        shot: ShotType::Smash,
        actions: &["jumps and smashes", "unleashes a powerful smash"],
        trajectories: &[1],
        regions: &[1, 2],
        intents: &[0],
    },
    ShotGrammar {
        shot: ShotType::Clear,
        actions: &["plays a clear", "hits a full clear"],
        trajectories: &[0],
        regions: &[2],
        intents: &[1, 2],
    },
    ShotGrammar {
        shot: ShotType::Drop,
        actions: &["plays a drop shot", "slices a drop shot"],
        trajectories: &[3, 1],
        regions: &[0],
        intents: &[2],
    },
    ShotGrammar {
        shot: ShotType::Push,
        actions: &["pushes the shuttle", "plays a quick push"],
        trajectories: &[2, 3],
        regions: &[1],
        intents: &[2],
    },
    ShotGrammar {
        shot: ShotType::NetShot,
        actions: &["plays a net shot", "tumbles a net shot"],
        trajectories: &[3],
        regions: &[0],
        intents: &[2, 1],
    },
    ShotGrammar {
        shot: ShotType::NetKill,
        actions: &["pounces with a net kill", "plays a net kill"],
        trajectories: &[1],
        regions: &[0],
        intents: &[0],
    },
    ShotGrammar {
        shot: ShotType::Lift,
        actions: &["lifts the shuttle", "plays a lift"],
        trajectories: &[0],
        regions: &[2],
        intents: &[1],
    },
    ShotGrammar {
        shot: ShotType::Drive,
        actions: &["drives the shuttle", "plays a fast drive"],
        trajectories: &[2],
        regions: &[1],
        intents: &[0, 2],
    },
    ShotGrammar {
        shot: ShotType::Block,
        actions: &["blocks the smash", "plays a block"],
        trajectories: &[3],
        regions: &[0, 1],
        intents: &[1],
    },
    ShotGrammar {
        shot: ShotType::Press,
        actions: &["presses the shuttle", "plays a press"],
        trajectories: &[1, 2],
        regions: &[0, 1],
        intents: &[0, 2],
    },
];

pub fn grammar_for(shot: ShotType) -> &'static ShotGrammar {
    &GRAMMAR[shot.index()]
}

/// Caption choice: indices into the action list and the three phrase tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CaptionChoice {
    pub action: usize,
    pub trajectory: usize,
    pub trajectory_variant: usize,
    pub region: usize,
    pub region_variant: usize,
    pub intent: usize,
    pub intent_variant: usize,
}

pub fn render_caption(shot: ShotType, c: &CaptionChoice) -> String {
    let g = grammar_for(shot);
    format!(
        "[PLAYER] {} {} {} {}.",
        g.actions[c.action],
        TRAJECTORY_PHRASES[c.trajectory][c.trajectory_variant],
        REGION_PHRASES[c.region][c.region_variant],
        INTENT_PHRASES[c.intent][c.intent_variant]
    )
}

/// Semantic vector the grammar intends for a caption choice.
pub fn intended_vector(shot: ShotType, c: &CaptionChoice) -> SemanticVector {
    let mut v = SemanticVector::for_shot(shot);
    v.set(
        AttributeGroup::Trajectory.range().start + c.trajectory,
        true,
    );
    v.set(AttributeGroup::CourtRegion.range().start + c.region, true);
    v.set(
        AttributeGroup::TacticalIntent.range().start + c.intent,
        true,
    );
    v
}

fn pick<'a, T>(rng: &mut impl Rng, xs: &'a [T]) -> &'a T {
    &xs[rng.gen_range(0..xs.len())]
}

pub fn sample_caption(shot: ShotType, rng: &mut impl Rng) -> (String, SemanticVector) {
    let g = grammar_for(shot);
    let trajectory = *pick(rng, g.trajectories);
    let region = *pick(rng, g.regions);
    let intent = *pick(rng, g.intents);
    let c = CaptionChoice {
        action: rng.gen_range(0..g.actions.len()),
        trajectory,
        trajectory_variant: rng.gen_range(0..TRAJECTORY_PHRASES[trajectory].len()),
        region,
        region_variant: rng.gen_range(0..REGION_PHRASES[region].len()),
        intent,
        intent_variant: rng.gen_range(0..INTENT_PHRASES[intent].len()),
    };
    (render_caption(shot, &c), intended_vector(shot, &c))
}

/// Vocabulary covering every word the grammar can produce.
pub fn grammar_vocabulary() -> Vocabulary {
    let mut phrases: Vec<&str> = vec!["[PLAYER] ."];
    for g in &GRAMMAR {
        phrases.extend(g.actions.iter().copied());
    }
    for table in TRAJECTORY_PHRASES
        .iter()
        .chain(REGION_PHRASES.iter())
        .chain(INTENT_PHRASES.iter())
    {
        phrases.extend(table.iter().copied());
    }
    Vocabulary::build(phrases, 1)
}

/// Shuttle flight after a hit in frame-size units per frame:
/// `(x speed, initial y speed, y acceleration)`; positive y points down.
pub fn flight_params(shot: ShotType) -> (f64, f64, f64) {
    match shot {
        ShotType::Serve => (0.006, -0.012, 0.002),
        ShotType::LongServe => (0.004, -0.028, 0.003),
        ShotType::Smash => (0.006, 0.020, 0.0),
        ShotType::Clear => (0.004, -0.030, 0.0035),
        ShotType::Drop => (0.008, -0.010, 0.003),
        ShotType::Push => (0.010, 0.006, 0.0005),
        ShotType::NetShot => (0.003, -0.005, 0.0012),
        ShotType::NetKill => (0.005, 0.022, 0.0),
        ShotType::Lift => (0.005, -0.025, 0.0025),
        ShotType::Drive => (0.022, 0.001, 0.0),
        ShotType::Block => (0.004, -0.003, 0.0009),
        ShotType::Press => (0.012, 0.012, 0.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    /// Number of shot samples (hit events) to generate.
    pub samples: usize,
    /// Square frame side in pixels.
    pub frame_size: usize,
    pub fps: f64,
    pub hits_per_rally: usize,
    pub pose_keypoints: usize,
    /// Probability that a frame's shuttle detection is missing in the sidecar.
    pub shuttle_dropout: f64,
    /// Shot types to draw from uniformly; all twelve when empty.
    pub shot_types: Vec<ShotType>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            samples: 32,
            frame_size: 224,
            fps: 30.0,
            hits_per_rally: 4,
            pose_keypoints: 17,
            shuttle_dropout: 0.05,
            shot_types: Vec::new(),
        }
    }
}

const HIT_GAP: u64 = 20;
const LEAD_IN: u64 = 10;
const TAIL: u64 = 16;

/// Ground-truth scene state of one frame.
#[derive(Debug, Clone, Copy)]
struct SceneFrame {
    near: BBox,
    far: BBox,
    shuttle: [f64; 2],
}

#[derive(Debug, Clone)]
struct RallyTruth {
    first_frame: Frame,
    frames: Vec<SceneFrame>,
    pose_phase: f64,
}

/// Output of [`synth_generate`].
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub matches: Vec<MatchRecord>,
    /// One sidecar per rally, in rally order.
    pub sidecars: Vec<ModalitySidecar>,
    pub samples: Vec<ShotSample>,
    pub vocab: Vocabulary,
    truth: Vec<RallyTruth>,
}

const POSE_LAYOUT: [(f64, f64); 17] = [
    (0.50, 0.06),
    (0.45, 0.04),
    (0.55, 0.04),
    (0.40, 0.06),
    (0.60, 0.06),
    (0.30, 0.22),
    (0.70, 0.22),
    (0.22, 0.38),
    (0.78, 0.38),
    (0.18, 0.52),
    (0.82, 0.52),
    (0.38, 0.55),
    (0.62, 0.55),
    (0.36, 0.76),
    (0.64, 0.76),
    (0.34, 0.97),
    (0.66, 0.97),
];

fn pose_in(b: &BBox, keypoints: usize, swing: f64) -> Vec<[f64; 2]> {
    let (bw, bh) = (b.x2 - b.x1, b.y2 - b.y1);
    (0..keypoints)
        .map(|k| {
            let (rx, ry) = POSE_LAYOUT[k % POSE_LAYOUT.len()];
            // wrists swing with the stroke
            let dx = if k == 9 || k == 10 { swing * 0.1 } else { 0.0 };
            [b.x1 + (rx + dx).clamp(0.0, 1.0) * bw, b.y1 + ry * bh]
        })
        .collect()
}

fn player_box(center_x: f64, feet_y: f64, w: f64, h: f64) -> BBox {
    BBox::new(center_x - w / 2.0, feet_y - h, center_x + w / 2.0, feet_y)
}

struct ShotPlan {
    frame: Frame,
    slot: PlayerSlot,
    shot: ShotType,
    caption: String,
    flight: (f64, f64, f64),
}

fn simulate_rally(
    first_frame: Frame,
    last_frame: Frame,
    shots: &[ShotPlan],
    size: f64,
    rng: &mut ChaCha8Rng,
) -> RallyTruth {
    let phase_n: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let phase_f: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut frames = Vec::with_capacity((last_frame - first_frame + 1) as usize);
    for f in first_frame..=last_frame {
        let local = (f - first_frame) as f64;
        let near = player_box(
            size * (0.5 + 0.18 * (phase_n + 0.05 * local).sin()),
            size * 0.9,
            size * 0.12,
            size * 0.26,
        );
        let far = player_box(
            size * (0.5 + 0.15 * (phase_f + 0.04 * local).sin()),
            size * 0.38,
            size * 0.08,
            size * 0.17,
        );
        frames.push(SceneFrame {
            near,
            far,
            shuttle: [0.0, 0.0],
        });
    }
    let racket = |sf: &SceneFrame, slot: PlayerSlot| {
        let b = match slot {
            PlayerSlot::Near => sf.near,
            PlayerSlot::Far => sf.far,
        };
        [(b.x1 + b.x2) / 2.0, b.y1 + 0.02 * size]
    };
    let clamp = |v: f64| v.clamp(0.0, size - 1.0);
    for (i, f) in (first_frame..=last_frame).enumerate() {
        let current = shots.iter().rev().find(|s| s.frame <= f);
        let pos = match current {
            None => match shots.first() {
                Some(s) => racket(&frames[i], s.slot),
                None => [size / 2.0, size / 2.0],
            },
            Some(s) => {
                let hit_i = (s.frame - first_frame) as usize;
                let [x0, y0] = racket(&frames[hit_i], s.slot);
                let t = (f - s.frame) as f64;
                let (vx, vy, ay) = s.flight;
                [
                    clamp(x0 + vx * size * t),
                    clamp(y0 + vy * size * t + 0.5 * ay * size * t * t),
                ]
            }
        };
        frames[i].shuttle = pos;
    }
    RallyTruth {
        first_frame,
        frames,
        pose_phase: phase_n,
    }
}

fn render_frame(out: &mut [u8], sf: &SceneFrame, size: usize, pose_keypoints: usize, swing: f64) {
    let s = size as f64;
    let put = |out: &mut [u8], x: i64, y: i64, rgb: [u8; 3]| {
        if x >= 0 && y >= 0 && (x as usize) < size && (y as usize) < size {
            let o = (y as usize * size + x as usize) * 3;
            out[o..o + 3].copy_from_slice(&rgb);
        }
    };
    for px in out.chunks_exact_mut(3) {
        px.copy_from_slice(&[18, 40, 24]);
    }
    for line_y in [0.2, 0.55, 0.95] {
        let y = (line_y * s) as i64;
        for x in 0..size as i64 {
            put(out, x, y, [70, 90, 70]);
        }
    }
    for (b, rgb) in [(sf.near, [150u8, 60, 60]), (sf.far, [60u8, 60, 150])] {
        for y in b.y1.floor() as i64..=b.y2.ceil() as i64 {
            for x in b.x1.floor() as i64..=b.x2.ceil() as i64 {
                put(out, x, y, rgb);
            }
        }
        for [x, y] in pose_in(&b, pose_keypoints, swing) {
            put(out, x.round() as i64, y.round() as i64, [200, 200, 200]);
        }
    }
    let r = (size / 56).max(1) as i64;
    let (cx, cy) = (sf.shuttle[0].round() as i64, sf.shuttle[1].round() as i64);
    for dy in -r..=r {
        for dx in -r..=r {
            put(out, cx + dx, cy + dy, [255, 255, 255]);
        }
    }
}

struct TruthRenderer<'a> {
    truth: &'a RallyTruth,
    size: usize,
    pose_keypoints: usize,
}

impl ClipSource for TruthRenderer<'_> {
    fn frames(&self, frames: &[Frame]) -> Result<Clip, PipelineError> {
        let mut clip = Clip::zeros(frames.len(), self.size, self.size, 3);
        for (i, &f) in frames.iter().enumerate() {
            let local = f
                .checked_sub(self.truth.first_frame)
                .map(|d| d as usize)
                .filter(|&d| d < self.truth.frames.len())
                .ok_or_else(|| PipelineError::ClipMismatch(format!("frame {f} outside rally")))?;
            let swing = (self.truth.pose_phase + local as f64 * 0.3).sin();
            render_frame(
                clip.frame_mut(i),
                &self.truth.frames[local],
                self.size,
                self.pose_keypoints,
                swing,
            );
        }
        Ok(clip)
    }
}

impl SynthCorpus {
    /// Renders the stored clip of a whole rally segment.
    pub fn rally_clip(&self, rally_index: usize) -> Result<RallyClip, PipelineError> {
        let truth = &self.truth[rally_index];
        let frames: Vec<Frame> =
            (truth.first_frame..truth.first_frame + truth.frames.len() as u64).collect();
        let clip = TruthRenderer {
            truth,
            size: self.config.frame_size,
            pose_keypoints: self.config.pose_keypoints,
        }
        .frames(&frames)?;
        Ok(RallyClip {
            first_frame: truth.first_frame,
            clip,
        })
    }

    pub fn match_record(&self) -> &MatchRecord {
        &self.matches[0]
    }
}

/// Generates a single-match singles corpus with `config.samples` hit events.
pub fn synth_generate(config: &SynthConfig) -> Result<SynthCorpus, PipelineError> {
    if config.samples == 0 || config.hits_per_rally == 0 || config.frame_size < 8 {
        return Err(PipelineError::Malformed(
            "synthetic corpus needs samples >= 1, hits_per_rally >= 1 and frame_size >= 8".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let size = config.frame_size as f64;
    let types: Vec<ShotType> = if config.shot_types.is_empty() {
        ShotType::ALL.to_vec()
    } else {
        config.shot_types.clone()
    };
    let match_id = format!("synth-{}", config.seed);
    let mut record = MatchRecord {
        match_id: match_id.clone(),
        discipline: Discipline::Singles,
        fps: config.fps,
        total_frames: 0,
        segments: Vec::new(),
        rallies: Vec::new(),
        extras: Default::default(),
    };
    let mut truths = Vec::new();
    let mut sidecars = Vec::new();
    let mut cursor: Frame = 30;
    let mut remaining = config.samples;
    let mut rally_no = 0;
    while remaining > 0 {
        let n_hits = remaining.min(config.hits_per_rally);
        remaining -= n_hits;
        let start = cursor;
        let plans: Vec<ShotPlan> = (0..n_hits)
            .map(|k| {
                let shot = *pick(&mut rng, &types);
                let (caption, _) = sample_caption(shot, &mut rng);
                let (vx, vy, ay) = flight_params(shot);
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let mut jitter = || rng.gen_range(0.9..1.1);
                ShotPlan {
                    frame: start + LEAD_IN + k as u64 * HIT_GAP,
                    slot: if k % 2 == 0 {
                        PlayerSlot::Near
                    } else {
                        PlayerSlot::Far
                    },
                    shot,
                    caption,
                    flight: (sign * vx * jitter(), vy * jitter(), ay * jitter()),
                }
            })
            .collect();
        let last_hit = plans.last().map_or(start + LEAD_IN, |p| p.frame);
        let end = last_hit + TAIL;
        let truth = simulate_rally(start, end, &plans, size, &mut rng);

        let rally_id = format!("{match_id}-r{rally_no:03}");
        let mut rally = RallyRecord::new(rally_id.clone());
        for p in &plans {
            rally.hits.push(HitEvent::new(
                p.frame,
                p.slot,
                ShotAnnotation::new(p.shot, p.caption.clone()),
            ));
        }
        rally.landings.push(last_hit + 12);
        record
            .segments
            .push(Segment::new(SegmentKind::Rally, start, end));
        record.rallies.push(rally);

        let frames = truth
            .frames
            .iter()
            .enumerate()
            .map(|(i, sf)| {
                let swing = (truth.pose_phase + i as f64 * 0.3).sin();
                let obs = |b: BBox| PlayerObservation {
                    bbox: b,
                    pose: pose_in(&b, config.pose_keypoints, swing),
                };
                let dropped = rng.gen_bool(config.shuttle_dropout.clamp(0.0, 1.0));
                FrameModalities {
                    frame: start + i as u64,
                    players: PlayerPair {
                        near: Some(obs(sf.near)),
                        far: Some(obs(sf.far)),
                    },
                    shuttle: if dropped { None } else { Some(sf.shuttle) },
                }
            })
            .collect();
        sidecars.push(ModalitySidecar {
            rally_id,
            frame_size: Some([size, size]),
            frames,
            extras: Default::default(),
        });
        truths.push(truth);

        cursor = end + 1;
        if rally_no % 3 == 2 {
            record
                .segments
                .push(Segment::new(SegmentKind::Replay, cursor + 10, cursor + 70));
            cursor += 71;
        }
        cursor += 20;
        rally_no += 1;
    }
    record.total_frames = cursor + 10;

    let vocab = grammar_vocabulary();
    let lexicon = Lexicon::default();
    let opts = SampleOptions {
        pose_keypoints: config.pose_keypoints,
        frame_size: None,
    };
    let mut samples = Vec::with_capacity(config.samples);
    for (ri, rally) in record.rallies.iter().enumerate() {
        let renderer = TruthRenderer {
            truth: &truths[ri],
            size: config.frame_size,
            pose_keypoints: config.pose_keypoints,
        };
        for hi in 0..rally.hits.len() {
            samples.push(build_sample(
                &record,
                ri,
                hi,
                &sidecars[ri],
                &renderer,
                &vocab,
                &lexicon,
                &opts,
            )?);
        }
    }
    Ok(SynthCorpus {
        config: config.clone(),
        matches: vec![record],
        sidecars,
        samples,
        vocab,
        truth: truths,
    })
}

/// Target counts for one discipline column of a mirrored statistics fixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnTargets {
    pub matches: u64,
    pub hours: f64,
    pub rallies: u64,
    pub replays: u64,
    pub hawkeye: u64,
    pub hits: u64,
    pub net_hits: u64,
    pub landings: u64,
}

/// Counts of the published 19-match corpus (12 singles, 7 doubles).
pub const CORPUS_TARGETS: [(Discipline, ColumnTargets); 2] = [
    (
        Discipline::Singles,
        ColumnTargets {
            matches: 12,
            hours: 13.307,
            rallies: 1054,
            replays: 514,
            hawkeye: 38,
            hits: 11301,
            net_hits: 210,
            landings: 973,
        },
    ),
    (
        Discipline::Doubles,
        ColumnTargets {
            matches: 7,
            hours: 7.016,
            rallies: 633,
            replays: 281,
            hawkeye: 14,
            hits: 5450,
            net_hits: 209,
            landings: 583,
        },
    ),
];

fn spread(total: u64, parts: u64) -> Vec<u64> {
    (0..parts)
        .map(|i| total / parts + u64::from(i < total % parts))
        .collect()
}

/// Builds valid match records whose aggregate counts equal `targets`.
pub fn mirror_fixture(
    targets: &[(Discipline, ColumnTargets)],
    seed: u64,
) -> Result<Vec<MatchRecord>, PipelineError> {
    const FPS: f64 = 25.0;
    const MARGIN: u64 = 50;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (discipline, t) in targets {
        let tag = match discipline {
            Discipline::Singles => 's',
            Discipline::Doubles => 'd',
        };
        let total_frames = (t.hours * 3600.0 * FPS).round() as u64;
        let per = |x: u64| spread(x, t.matches);
        let (frames, rallies, replays, hawkeye, hits, nets, landings) = (
            per(total_frames),
            per(t.rallies),
            per(t.replays),
            per(t.hawkeye),
            per(t.hits),
            per(t.net_hits),
            per(t.landings),
        );
        for mi in 0..t.matches as usize {
            let match_id = format!("mirror-{tag}{:02}", mi + 1);
            let n_rallies = rallies[mi];
            let slot = (frames[mi] - 2 * MARGIN) / n_rallies.max(1);
            let hits_per = spread(hits[mi], n_rallies);
            let mut m = MatchRecord {
                match_id: match_id.clone(),
                discipline: *discipline,
                fps: FPS,
                total_frames: frames[mi],
                segments: Vec::new(),
                rallies: Vec::new(),
                extras: Default::default(),
            };
            for ri in 0..n_rallies {
                let start = MARGIN + ri * slot;
                let n_hits = hits_per[ri as usize];
                let mut rally = RallyRecord::new(format!("{match_id}-r{ri:03}"));
                for k in 0..n_hits {
                    let shot = *pick(&mut rng, &ShotType::ALL);
                    let (caption, _) = sample_caption(shot, &mut rng);
                    let slot_side = if k % 2 == 0 {
                        PlayerSlot::Near
                    } else {
                        PlayerSlot::Far
                    };
                    rally.hits.push(HitEvent::new(
                        start + LEAD_IN + k * 25,
                        slot_side,
                        ShotAnnotation::new(shot, caption),
                    ));
                }
                let end = start + LEAD_IN + n_hits.saturating_sub(1) * 25 + TAIL;
                if ri < nets[mi] {
                    rally.net_hits.push(start + LEAD_IN + 12);
                }
                if ri < landings[mi] {
                    rally.landings.push(end - 4);
                }
                m.segments
                    .push(Segment::new(SegmentKind::Rally, start, end));
                let mut cursor = end;
                if ri < replays[mi] {
                    m.segments
                        .push(Segment::new(SegmentKind::Replay, cursor + 10, cursor + 160));
                    cursor += 160;
                }
                if ri < hawkeye[mi] {
                    m.segments.push(Segment::new(
                        SegmentKind::Hawkeye,
                        cursor + 10,
                        cursor + 110,
                    ));
                    cursor += 110;
                }
                if cursor >= start + slot {
                    return Err(PipelineError::Malformed(format!(
                        "{match_id}: rally {ri} does not fit its {slot}-frame slot"
                    )));
                }
                m.rallies.push(rally);
            }
            out.push(m);
        }
    }
    Ok(out)
}

/// Expected caption word count under the grammar with uniform choices at
/// every branch, per shot type.
pub fn grammar_mean_words() -> BTreeMap<ShotType, f64> {
    let words = |s: &str| s.split_whitespace().count() as f64;
    let mean_of = |xs: &[&str]| xs.iter().map(|s| words(s)).sum::<f64>() / xs.len() as f64;
    GRAMMAR
        .iter()
        .map(|g| {
            let traj = g
                .trajectories
                .iter()
                .map(|&i| mean_of(TRAJECTORY_PHRASES[i]))
                .sum::<f64>()
                / g.trajectories.len() as f64;
            let region = g
                .regions
                .iter()
                .map(|&i| mean_of(REGION_PHRASES[i]))
                .sum::<f64>()
                / g.regions.len() as f64;
            let intent = g
                .intents
                .iter()
                .map(|&i| mean_of(INTENT_PHRASES[i]))
                .sum::<f64>()
                / g.intents.len() as f64;
            (g.shot, 1.0 + mean_of(g.actions) + traj + region + intent)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::{derive_semantic_vector, validate_match};

    fn small(seed: u64, n: usize) -> SynthCorpus {
        synth_generate(&SynthConfig {
            seed,
            samples: n,
            frame_size: 32,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn deterministic_given_seed() {
        let a = small(7, 2);
        let b = small(7, 2);
        assert_eq!(a.matches, b.matches);
        assert_eq!(a.sidecars, b.sidecars);
        assert_eq!(a.samples, b.samples);
        assert_ne!(small(8, 2).matches[0].rallies, a.matches[0].rallies);
    }

    #[test]
    fn every_caption_choice_derives_its_intended_vector() {
        let lex = Lexicon::default();
        for g in &GRAMMAR {
            for action in 0..g.actions.len() {
                for &trajectory in g.trajectories {
                    for &region in g.regions {
                        for &intent in g.intents {
                            for (tv, rv, iv) in itertools_product() {
                                let c = CaptionChoice {
                                    action,
                                    trajectory,
                                    trajectory_variant: tv,
                                    region,
                                    region_variant: rv,
                                    intent,
                                    intent_variant: iv,
                                };
                                let cap = render_caption(g.shot, &c);
                                let derived = derive_semantic_vector(
                                    &ShotAnnotation::new(g.shot, &cap),
                                    &lex,
                                );
                                assert_eq!(derived, intended_vector(g.shot, &c), "{cap}");
                            }
                        }
                    }
                }
            }
        }
    }

    fn itertools_product() -> impl Iterator<Item = (usize, usize, usize)> {
        (0..2).flat_map(|a| (0..2).flat_map(move |b| (0..2).map(move |c| (a, b, c))))
    }

    #[test]
    fn smash_shuttle_descends_after_hit() {
        let c = synth_generate(&SynthConfig {
            seed: 3,
            samples: 8,
            frame_size: 64,
            shuttle_dropout: 0.0,
            shot_types: vec![ShotType::Smash],
            ..Default::default()
        })
        .unwrap();
        for s in &c.samples {
            let ys: Vec<f64> = s.modalities.shuttle[3..].iter().map(|p| p[1]).collect();
            assert!(ys.windows(2).all(|w| w[1] > w[0]), "{ys:?}");
        }
    }

    #[test]
    fn output_passes_validation_and_sample_checks() {
        let c = small(11, 10);
        assert_eq!(c.samples.len(), 10);
        assert!(validate_match(c.match_record()).is_empty());
        for s in &c.samples {
            s.check().unwrap();
            assert_eq!(s.clip.shape(), [16, 32, 32, 3]);
            assert!(s.caption_tokens.iter().all(|&t| t != crate::pipeline::UNK));
        }
    }

    #[test]
    fn rendered_rally_clip_matches_sample_window() {
        let c = small(5, 4);
        let rc = c.rally_clip(0).unwrap();
        let s = &c.samples[1];
        assert_eq!(rc.frames(&s.frame_window).unwrap(), s.clip);
        // the shuttle blob is the brightest thing in the frame
        assert!(s.clip.data.contains(&255));
    }

    #[test]
    fn mean_caption_length_matches_grammar() {
        let c = synth_generate(&SynthConfig {
            seed: 1,
            samples: 320,
            frame_size: 8,
            ..Default::default()
        })
        .unwrap();
        let expected: f64 = grammar_mean_words().values().sum::<f64>() / 12.0;
        let mean = c
            .samples
            .iter()
            .map(|s| s.caption.split_whitespace().count() as f64)
            .sum::<f64>()
            / 320.0;
        assert!((mean - expected).abs() <= 1.0, "{mean} vs {expected}");
    }

    #[test]
    fn mirror_fixture_counts() {
        let ms = mirror_fixture(&CORPUS_TARGETS, 1).unwrap();
        assert_eq!(ms.len(), 19);
        let hits: usize = ms.iter().map(MatchRecord::hit_count).sum();
        assert_eq!(hits, 16751);
        for m in &ms {
            assert!(validate_match(m).is_empty(), "{}", m.match_id);
        }
    }
}

//! On-disk corpus layout: `annotations/<match_id>.json`,
//! `modalities/<rally_id>.json`, `clips/<rally_id>.clip` and an optional
//! `vocab.json`.

use crate::config::RunConfig;
use crate::error::CliError;
use serde::Serialize;
use shotcap_core::annotation::{parse_match, AnnotationError, Lexicon, MatchRecord};
use shotcap_core::pipeline::{
    build_sample, split_dataset, Clip, ModalitySidecar, PipelineError, RallyClip, SampleOptions,
    ShotSample, Vocabulary,
};
use std::path::{Path, PathBuf};

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// `*.json` files of a directory in name order.
pub fn json_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut files = Vec::new();
    for e in entries {
        let p = e.map_err(|e| CliError::io(dir, e))?.path();
        if p.extension().is_some_and(|x| x == "json") {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

type ParsedFile = (PathBuf, Result<MatchRecord, AnnotationError>);

/// Every annotation file with its parse outcome.
pub fn read_matches(dir: &Path) -> Result<Vec<ParsedFile>, CliError> {
    json_files(dir)?
        .into_iter()
        .map(|p| {
            let text = read_text(&p)?;
            Ok((p, parse_match(&text)))
        })
        .collect()
}

pub fn load_matches(dir: &Path) -> Result<Vec<MatchRecord>, CliError> {
    let parsed = read_matches(dir)?;
    if parsed.is_empty() {
        return Err(CliError::Domain(format!(
            "no annotation files in {}",
            dir.display()
        )));
    }
    parsed
        .into_iter()
        .map(|(p, r)| r.map_err(|e| CliError::Domain(format!("{}: {e}", p.display()))))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

pub struct Dataset {
    pub vocab: Vocabulary,
    pub train: Vec<ShotSample>,
    pub val: Vec<ShotSample>,
    pub test: Vec<ShotSample>,
    /// Hits left out because a player track had too many gaps.
    pub skipped: Vec<String>,
}

impl Dataset {
    pub fn part(&self, split: SplitName) -> &[ShotSample] {
        match split {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }
}

/// Splits rallies with `seed`, then builds every sample. Without a given
/// vocabulary the one in the data directory is used, or else one is built
/// from the training captions.
pub fn load_dataset(
    cfg: &RunConfig,
    seed: u64,
    vocab: Option<Vocabulary>,
) -> Result<Dataset, CliError> {
    let matches = load_matches(&cfg.paths.annotations()?)?;
    let rallies: Vec<(usize, usize, String)> = matches
        .iter()
        .enumerate()
        .flat_map(|(mi, m)| {
            m.rallies
                .iter()
                .enumerate()
                .map(move |(ri, r)| (mi, ri, r.rally_id.clone()))
        })
        .collect();
    let split = split_dataset(rallies, |r| r.2.clone(), cfg.split, seed)?;
    let vocab = match vocab {
        Some(v) => v,
        None => match cfg.paths.vocab().filter(|p| p.exists()) {
            Some(p) => Vocabulary::from_json(&read_text(&p)?)?,
            None => {
                let captions = split.train.iter().flat_map(|&(mi, ri, _)| {
                    matches[mi].rallies[ri]
                        .hits
                        .iter()
                        .map(|h| h.shot.caption.as_str())
                });
                Vocabulary::build(captions, 1)
            }
        },
    };
    let modalities = cfg.paths.modalities()?;
    let clips = cfg.paths.clips()?;
    let lexicon = Lexicon::default();
    let mut skipped = Vec::new();
    let mut build = |part: &[(usize, usize, String)]| -> Result<Vec<ShotSample>, CliError> {
        let mut out = Vec::new();
        for (mi, ri, rally_id) in part {
            let m = &matches[*mi];
            let sidecar = ModalitySidecar::from_json(&read_text(
                &modalities.join(format!("{rally_id}.json")),
            )?)?;
            let clip_path = clips.join(format!("{rally_id}.clip"));
            let clip = Clip::load(&clip_path).map_err(|e| match e {
                PipelineError::Io(e) => CliError::io(&clip_path, e),
                other => CliError::Domain(format!("{}: {other}", clip_path.display())),
            })?;
            let span = m
                .rally_span(*ri)
                .ok_or_else(|| CliError::Domain(format!("rally {rally_id} has no segment")))?;
            let source = RallyClip {
                first_frame: span.start_frame,
                clip,
            };
            let opts = SampleOptions {
                pose_keypoints: sidecar_keypoints(&sidecar).unwrap_or(17),
                frame_size: None,
            };
            for hi in 0..m.rallies[*ri].hits.len() {
                match build_sample(m, *ri, hi, &sidecar, &source, &vocab, &lexicon, &opts) {
                    Ok(s) => out.push(s),
                    Err(PipelineError::ModalityGap { .. }) => {
                        skipped.push(format!("{rally_id}#{hi}"))
                    }
                    Err(e) => return Err(CliError::Domain(format!("{rally_id} hit {hi}: {e}"))),
                }
            }
        }
        Ok(out)
    };
    let train = build(&split.train)?;
    let val = build(&split.val)?;
    let test = build(&split.test)?;
    Ok(Dataset {
        vocab,
        train,
        val,
        test,
        skipped,
    })
}

fn sidecar_keypoints(s: &ModalitySidecar) -> Option<usize> {
    s.frames
        .iter()
        .flat_map(|f| [f.players.near.as_ref(), f.players.far.as_ref()])
        .flatten()
        .map(|p| p.pose.len())
        .find(|&n| n > 0)
}

use super::PipelineError;
use crate::annotation::Frame;
use std::io::{Read, Write};
use std::path::Path;

pub const CLIP_MAGIC: &[u8; 8] = b"BFMDCLIP";

/// Raw `T x H x W x C` u8 pixel array, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clip {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<u8>,
}

impl Clip {
    pub fn zeros(t: usize, h: usize, w: usize, c: usize) -> Self {
        Self {
            t,
            h,
            w,
            c,
            data: vec![0; t * h * w * c],
        }
    }

    pub fn frame_len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.t, self.h, self.w, self.c]
    }

    #[inline]
    pub fn offset(&self, t: usize, y: usize, x: usize, ch: usize) -> usize {
        ((t * self.h + y) * self.w + x) * self.c + ch
    }

    pub fn get(&self, t: usize, y: usize, x: usize, ch: usize) -> u8 {
        self.data[self.offset(t, y, x, ch)]
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [u8] {
        let n = self.frame_len();
        &mut self.data[t * n..(t + 1) * n]
    }

    /// New clip made of the listed frames (repeats allowed).
    pub fn select(&self, frames: &[usize]) -> Result<Clip, PipelineError> {
        let mut out = Clip::zeros(frames.len(), self.h, self.w, self.c);
        for (i, &f) in frames.iter().enumerate() {
            if f >= self.t {
                return Err(PipelineError::ClipMismatch(format!(
                    "frame {f} outside clip of {} frames",
                    self.t
                )));
            }
            out.frame_mut(i).copy_from_slice(self.frame(f));
        }
        Ok(out)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(CLIP_MAGIC)?;
        for d in [self.t, self.h, self.w, self.c] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&self.data)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Clip, PipelineError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| PipelineError::Malformed("clip: truncated header".into()))?;
        if &magic != CLIP_MAGIC {
            return Err(PipelineError::Malformed("clip: bad magic".into()));
        }
        let mut dims = [0usize; 4];
        for d in dims.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)
                .map_err(|_| PipelineError::Malformed("clip: truncated header".into()))?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let [t, h, w, c] = dims;
        let mut data = vec![0u8; t * h * w * c];
        r.read_exact(&mut data)
            .map_err(|_| PipelineError::Malformed("clip: truncated pixel data".into()))?;
        Ok(Clip { t, h, w, c, data })
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let f = std::fs::File::create(path)?;
        let mut bw = std::io::BufWriter::new(f);
        self.write_to(&mut bw)?;
        bw.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Clip, PipelineError> {
        let f = std::fs::File::open(path)?;
        Clip::read_from(std::io::BufReader::new(f))
    }
}

/// Source of pixel frames addressed by absolute frame index.
pub trait ClipSource {
    fn frames(&self, frames: &[Frame]) -> Result<Clip, PipelineError>;
}

/// A stored clip covering consecutive frames starting at `first_frame`,
/// typically one rally segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RallyClip {
    pub first_frame: Frame,
    pub clip: Clip,
}

impl ClipSource for RallyClip {
    fn frames(&self, frames: &[Frame]) -> Result<Clip, PipelineError> {
        let local: Vec<usize> = frames
            .iter()
            .map(|&f| {
                f.checked_sub(self.first_frame)
                    .map(|d| d as usize)
                    .filter(|&d| d < self.clip.t)
                    .ok_or_else(|| {
                        PipelineError::ClipMismatch(format!(
                            "frame {f} not covered by clip starting at {} with {} frames",
                            self.first_frame, self.clip.t
                        ))
                    })
            })
            .collect::<Result<_, _>>()?;
        self.clip.select(&local)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trip() {
        let mut c = Clip::zeros(2, 3, 4, 3);
        for (i, p) in c.data.iter_mut().enumerate() {
            *p = (i * 7 % 251) as u8;
        }
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"BFMDCLIP");
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(buf.len(), 8 + 16 + 72);
        assert_eq!(Clip::read_from(&buf[..]).unwrap(), c);
        assert!(Clip::read_from(&buf[..30]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(Clip::read_from(&bad[..]).is_err());
    }

    #[test]
    fn rally_clip_window() {
        let mut c = Clip::zeros(5, 1, 1, 1);
        c.data = vec![10, 11, 12, 13, 14];
        let rc = RallyClip {
            first_frame: 100,
            clip: c,
        };
        let w = rc.frames(&[100, 100, 104]).unwrap();
        assert_eq!(w.data, vec![10, 10, 14]);
        assert!(rc.frames(&[99]).is_err());
        assert!(rc.frames(&[105]).is_err());
    }
}

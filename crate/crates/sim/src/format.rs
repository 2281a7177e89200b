//! On-disk episode container and dataset manifest.
//!
//! Episode files are little-endian: a fixed header, the raw frames, a
//! sequence of tagged label blocks, and a trailing CRC32 over everything
//! before it. Readers reject checksum failures and unknown major
//! versions before touching any payload.

use crate::error::{Result, SimError};
use crate::hand::JointState;
use crate::signal::RawSample;
use crate::synth::{EpisodeRecord, LabeledStep, Labels};
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::{Path, PathBuf};

pub const MAGIC: [u8; 4] = *b"SKIN";
/// Major version in the high 16 bits; readers accept any minor.
pub const FORMAT_VERSION: u32 = 0x0001_0000;
pub const SUPPORTED_MAJOR: u16 = 1;

const TAG_OBJECT_CLASS: u32 = 1;
const TAG_JOINTS: u32 = 2;
const TAG_FORCE: u32 = 3;
const TAG_POSE_SE2: u32 = 4;
const TAG_JOY_RPY: u32 = 5;

/// IEEE 802.3 reflected CRC32.
pub fn crc32(bytes: &[u8]) -> u32 {
    const fn table() -> [u32; 256] {
        let mut t = [0u32; 256];
        let mut i = 0;
        while i < 256 {
            let mut c = i as u32;
            let mut k = 0;
            while k < 8 {
                c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
                k += 1;
            }
            t[i] = c;
            i += 1;
        }
        t
    }
    const TABLE: [u32; 256] = table();
    let mut c = 0xFFFF_FFFFu32;
    for &b in bytes {
        c = TABLE[((c ^ b as u32) & 0xFF) as usize] ^ (c >> 8);
    }
    !c
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(SimError::InvalidInput("episode file truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(4 * n)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn push_f32s(out: &mut Vec<u8>, vals: impl IntoIterator<Item = f32>) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_episode(ep: &EpisodeRecord) -> Result<Vec<u8>> {
    let taxel_count = match ep.raw.first() {
        Some(s) => s.flux.len() / 3,
        None => return Err(SimError::InvalidInput("episode has no frames".into())),
    };
    for s in &ep.raw {
        if s.flux.len() != 3 * taxel_count {
            return Err(SimError::InvalidInput("inconsistent frame width".into()));
        }
    }

    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(ep.raw.len() as u32).to_le_bytes());
    out.extend_from_slice(&(taxel_count as u32).to_le_bytes());
    for s in &ep.raw {
        out.extend_from_slice(&s.timestamp.to_le_bytes());
        push_f32s(&mut out, s.flux.iter().copied());
    }

    let mut block = |tag: u32, payload: Vec<f32>| {
        out.extend_from_slice(&tag.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        push_f32s(&mut out, payload);
    };
    if let Some(c) = ep.labels.object_class {
        block(TAG_OBJECT_CLASS, vec![c as f32]);
    }
    if !ep.joints.is_empty() {
        let width = ep.joints[0].1.angles.len();
        let mut payload = Vec::with_capacity(ep.joints.len() * (width + 1));
        for (t, q) in &ep.joints {
            if q.angles.len() != width {
                return Err(SimError::InvalidInput("inconsistent joint width".into()));
            }
            payload.push(*t as f32);
            payload.extend(q.angles.iter().map(|&a| a as f32));
        }
        block(TAG_JOINTS, payload);
    }
    if let Some(f) = &ep.labels.per_frame_forces {
        if f.len() != ep.raw.len() {
            return Err(SimError::InvalidInput("force labels must align with frames".into()));
        }
        block(TAG_FORCE, f.iter().flatten().copied().collect());
    }
    let steps = |steps: &[LabeledStep]| {
        let mut p = Vec::with_capacity(steps.len() * 4);
        for s in steps {
            p.push(s.t as f32);
            p.extend_from_slice(&s.v);
        }
        p
    };
    if let Some(s) = &ep.labels.object_pose_se2 {
        block(TAG_POSE_SE2, steps(s));
    }
    if let Some(s) = &ep.labels.joystick_rpy {
        block(TAG_JOY_RPY, steps(s));
    }

    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode_episode(bytes: &[u8]) -> Result<EpisodeRecord> {
    if bytes.len() < 4 {
        return Err(SimError::InvalidInput("episode file truncated".into()));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let actual = crc32(body);
    if stored != actual {
        return Err(SimError::ChecksumMismatch(format!(
            "stored {stored:#010x}, computed {actual:#010x}"
        )));
    }

    let mut c = Cursor { buf: body, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(SimError::InvalidInput("not an episode file".into()));
    }
    let version = c.u32()?;
    if (version >> 16) as u16 != SUPPORTED_MAJOR {
        return Err(SimError::VersionMismatch { found: version, supported: SUPPORTED_MAJOR });
    }
    let frame_count = c.u32()? as usize;
    let taxel_count = c.u32()? as usize;

    let mut raw = Vec::with_capacity(frame_count);
    for _ in 0..frame_count {
        let timestamp = c.f64()?;
        let flux = c.f32s(3 * taxel_count)?;
        raw.push(RawSample { timestamp, flux });
    }

    let mut joints = Vec::new();
    let mut labels = Labels::default();
    while !c.done() {
        let tag = c.u32()?;
        let count = c.u32()? as usize;
        let payload = c.f32s(count)?;
        match tag {
            TAG_OBJECT_CLASS => {
                if payload.len() != 1 {
                    return Err(SimError::InvalidInput("bad class block".into()));
                }
                labels.object_class = Some(payload[0] as u32);
            }
            TAG_JOINTS => {
                if payload.len() % 17 != 0 {
                    return Err(SimError::InvalidInput("bad joint block".into()));
                }
                joints = payload
                    .chunks_exact(17)
                    .map(|row| {
                        (
                            f64::from(row[0]),
                            JointState {
                                angles: row[1..].iter().map(|&a| f64::from(a)).collect(),
                            },
                        )
                    })
                    .collect();
            }
            TAG_FORCE => {
                if payload.len() != 3 * frame_count {
                    return Err(SimError::InvalidInput("bad force block".into()));
                }
                labels.per_frame_forces = Some(
                    payload.chunks_exact(3).map(|r| [r[0], r[1], r[2]]).collect(),
                );
            }
            TAG_POSE_SE2 | TAG_JOY_RPY => {
                if payload.len() % 4 != 0 {
                    return Err(SimError::InvalidInput("bad step block".into()));
                }
                let steps: Vec<LabeledStep> = payload
                    .chunks_exact(4)
                    .map(|r| LabeledStep { t: f64::from(r[0]), v: [r[1], r[2], r[3]] })
                    .collect();
                if tag == TAG_POSE_SE2 {
                    labels.object_pose_se2 = Some(steps);
                } else {
                    labels.joystick_rpy = Some(steps);
                }
            }
            _ => return Err(SimError::InvalidInput(format!("unknown label tag {tag}"))),
        }
    }
    Ok(EpisodeRecord { raw, joints, labels })
}

/// Write via a temp file and rename so a crash never leaves a partial
/// episode under the final name.
pub fn write_episode(path: &Path, ep: &EpisodeRecord) -> Result<()> {
    let bytes = encode_episode(ep)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_episode(path: &Path) -> Result<EpisodeRecord> {
    let bytes = std::fs::read(path)
        .map_err(|_| SimError::MissingFile(path.display().to_string()))?;
    decode_episode(&bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub file: String,
    pub duration_s: f64,
    pub labels_present: Vec<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub generator_version: String,
    pub global_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub episodes: Vec<EpisodeMeta>,
}

impl DatasetManifest {
    pub fn new(global_seed: u64) -> DatasetManifest {
        DatasetManifest {
            generator_version: "1.0".into(),
            global_seed,
            config_hash: None,
            episodes: Vec::new(),
        }
    }
}

pub fn label_names(labels: &Labels) -> Vec<String> {
    let mut v = Vec::new();
    if labels.object_class.is_some() {
        v.push("object_class".into());
    }
    if labels.per_frame_forces.is_some() {
        v.push("force".into());
    }
    if labels.object_pose_se2.is_some() {
        v.push("pose_se2".into());
    }
    if labels.joystick_rpy.is_some() {
        v.push("joystick_rpy".into());
    }
    v
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, json)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path)
        .map_err(|_| SimError::MissingFile(path.display().to_string()))?;
    Ok(serde_json::from_str(&text)?)
}

/// Load a manifest and verify every episode file it references exists.
pub fn read_dataset(manifest_path: &Path) -> Result<(DatasetManifest, PathBuf)> {
    let manifest = read_manifest(manifest_path)?;
    let dir = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    for ep in &manifest.episodes {
        let p = dir.join(&ep.file);
        if !p.is_file() {
            return Err(SimError::MissingFile(p.display().to_string()));
        }
    }
    Ok((manifest, dir))
}

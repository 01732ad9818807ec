//! One demonstration per file pair: `<stem>.jsonl` holds a header line,
//! one line per record and an outcome line; `<stem>.frames` holds the
//! camera frames as `u32 width, u32 height, u32 count` followed by
//! `count·height·width` row-major `f32`, all little-endian.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::record::{pose_from_array, DemoSource, Demonstration, TrajectoryRecord};
use crate::action::Action;
use crate::arm::ArmState;
use crate::error::{Error, Result};
use crate::sim::{CameraFrame, SubtaskResult, TaskOutcome, TaskSpec, WaterFraction, WaterLine};

pub const DEMO_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header {
        format_version: u32,
        task: String,
        instruction: String,
        seed: u64,
        source: DemoSource,
        frames_file: String,
        frame_count: usize,
    },
    Record {
        t: f64,
        joints: [f64; 7],
        magnet_pose: [f64; 7],
        capsule_pose: [f64; 7],
        action: [f64; 7],
        frames: [usize; 2],
        water: WaterFraction,
        surface_height: f64,
        ik_flagged: bool,
    },
    Outcome {
        success: bool,
        subtasks: Vec<SubtaskResult>,
        flagged: bool,
    },
}

/// Header and outcome of a stored demo, without records or frames.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoSummary {
    pub task: TaskSpec,
    pub instruction: String,
    pub seed: u64,
    pub records: usize,
    pub success: bool,
    pub flagged: bool,
}

pub fn frames_path(jsonl: &Path) -> PathBuf {
    jsonl.with_extension("frames")
}

/// Writes `<dir>/<stem>.jsonl` and its frame blob; both land via rename so a
/// failed write leaves no partial file behind.
pub fn save_demo(demo: &Demonstration, dir: &Path, stem: &str) -> Result<PathBuf> {
    if demo.records.is_empty() {
        return Err(Error::validation("refusing to store an empty demonstration"));
    }
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{stem}.jsonl"));
    let blob = frames_path(&path);
    let blob_name = blob
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::validation("demo stem is not valid UTF-8"))?
        .to_string();

    let tmp_blob = blob.with_extension("frames.tmp");
    write_frames(&tmp_blob, &demo.frames)?;

    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        let header = Line::Header {
            format_version: DEMO_FORMAT_VERSION,
            task: demo.task.label(),
            instruction: demo.instruction.clone(),
            seed: demo.seed,
            source: demo.source,
            frames_file: blob_name,
            frame_count: demo.frames.len(),
        };
        write_line(&mut w, &header)?;
        for r in &demo.records {
            let line = Line::Record {
                t: r.timestamp,
                joints: r.joints.joints,
                magnet_pose: r.magnet_pose.to_array(),
                capsule_pose: r.capsule_pose.to_array(),
                action: r.action.to_array(),
                frames: r.frames,
                water: r.water.fraction,
                surface_height: r.water.surface_height,
                ik_flagged: r.ik_flagged,
            };
            write_line(&mut w, &line)?;
        }
        let outcome = Line::Outcome {
            success: demo.outcome.success,
            subtasks: demo.outcome.subtasks.clone(),
            flagged: demo.flagged,
        };
        write_line(&mut w, &outcome)?;
        w.flush()?;
    }
    fs::rename(&tmp_blob, &blob)?;
    fs::rename(&tmp, &path)?;
    Ok(path)
}

fn write_line<W: Write>(w: &mut W, line: &Line) -> Result<()> {
    serde_json::to_writer(&mut *w, line)?;
    w.write_all(b"\n")?;
    Ok(())
}

struct Parsed {
    header: Line,
    records: Vec<TrajectoryRecord>,
    outcome: Option<Line>,
}

fn parse_jsonl(path: &Path) -> Result<Parsed> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let reader = BufReader::new(File::open(path)?);
    let mut header = None;
    let mut records = Vec::new();
    let mut outcome = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        match parsed {
            h @ Line::Header { .. } if i == 0 => header = Some(h),
            Line::Header { .. } => return Err(Error::format(path, "header after the first line")),
            _ if header.is_none() => return Err(Error::format(path, "missing header")),
            _ if outcome.is_some() => return Err(Error::format(path, "content after the outcome line")),
            Line::Record {
                t,
                joints,
                magnet_pose,
                capsule_pose,
                action,
                frames,
                water,
                surface_height,
                ik_flagged,
            } => records.push(TrajectoryRecord {
                timestamp: t,
                joints: ArmState { joints },
                magnet_pose: pose_from_array(&magnet_pose),
                capsule_pose: pose_from_array(&capsule_pose),
                action: Action::from_slice(&action)?,
                frames,
                water: WaterLine {
                    fraction: water,
                    surface_height,
                },
                ik_flagged,
            }),
            o @ Line::Outcome { .. } => outcome = Some(o),
        }
    }
    let header = header.ok_or_else(|| Error::format(path, "empty file"))?;
    if let Line::Header { format_version, .. } = &header {
        if *format_version != DEMO_FORMAT_VERSION {
            return Err(Error::format(path, format!("unsupported format version {format_version}")));
        }
    }
    Ok(Parsed {
        header,
        records,
        outcome,
    })
}

pub fn load_demo(path: &Path) -> Result<Demonstration> {
    let Parsed {
        header,
        records,
        outcome,
    } = parse_jsonl(path)?;
    let Line::Header {
        task,
        instruction,
        seed,
        source,
        frames_file,
        frame_count,
        ..
    } = header
    else {
        unreachable!("parse_jsonl checks the header");
    };
    let Some(Line::Outcome {
        success,
        subtasks,
        flagged,
    }) = outcome
    else {
        return Err(Error::format(path, "missing outcome line (unfinished recording)"));
    };
    let task = TaskSpec::parse(&task)?;
    let blob = path.parent().unwrap_or(Path::new(".")).join(frames_file);
    let frames = read_frames(&blob)?;
    if frames.len() != frame_count {
        return Err(Error::format(&blob, format!("expected {frame_count} frames, found {}", frames.len())));
    }
    if records.is_empty() {
        return Err(Error::format(path, "no records"));
    }
    Ok(Demonstration {
        task,
        instruction,
        seed,
        source,
        records,
        frames,
        outcome: TaskOutcome {
            task,
            subtasks,
            success,
        },
        flagged,
    })
}

pub fn read_summary(path: &Path) -> Result<DemoSummary> {
    let p = parse_jsonl(path)?;
    let Line::Header {
        task,
        instruction,
        seed,
        ..
    } = p.header
    else {
        unreachable!("parse_jsonl checks the header");
    };
    let Some(Line::Outcome { success, flagged, .. }) = p.outcome else {
        return Err(Error::format(path, "missing outcome line (unfinished recording)"));
    };
    Ok(DemoSummary {
        task: TaskSpec::parse(&task)?,
        instruction,
        seed,
        records: p.records.len(),
        success,
        flagged,
    })
}

pub fn write_frames(path: &Path, frames: &[CameraFrame]) -> Result<()> {
    let (w, h) = frames.first().map_or((0, 0), |f| (f.width, f.height));
    if frames.iter().any(|f| f.width != w || f.height != h || f.intensity.len() != w * h) {
        return Err(Error::validation("frames in one blob must share dimensions"));
    }
    let mut out = BufWriter::new(File::create(path)?);
    for v in [w, h, frames.len()] {
        out.write_all(&(v as u32).to_le_bytes())?;
    }
    for f in frames {
        for v in &f.intensity {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_frames(path: &Path) -> Result<Vec<CameraFrame>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 12 {
        return Err(Error::format(path, "truncated frame header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes")) as usize;
    let (w, h, n) = (word(0), word(1), word(2));
    let per = w * h;
    if bytes.len() != 12 + 4 * per * n {
        return Err(Error::format(path, format!("expected {} bytes of frames", 4 * per * n)));
    }
    let floats: Vec<f32> = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(floats
        .chunks(per.max(1))
        .take(n)
        .map(|c| CameraFrame {
            width: w,
            height: h,
            intensity: c.to_vec(),
        })
        .collect())
}

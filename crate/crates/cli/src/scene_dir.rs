//! Scene directory layout:
//!
//! ```text
//! frame_0001.msfp ... frame_TTTT.msfp
//! proposals.json      current-frame proposals with velocity estimates
//! truth.json          per-frame true boxes, object point ranges, speed classes
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use msf_core::io::{load_frame, proposals_from_json, proposals_to_json, save_frame};
use msf_core::sim::{Scene, SceneTruth};
use msf_core::{PointCloudFrame, Proposal, SequenceWindow};

use crate::error::CliError;
use crate::manifest::write_json;

pub const PROPOSALS_FILE: &str = "proposals.json";
pub const TRUTH_FILE: &str = "truth.json";

pub fn frame_file_name(t: u32) -> String {
    format!("frame_{t:04}.msfp")
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<(T, String), CliError> {
    let text = read_text(path)?;
    let value = serde_json::from_str(&text).map_err(|e| CliError::json(path, &e))?;
    Ok((value, text))
}

/// Writes frames, proposals and truth; returns the file names written.
pub fn write_scene(dir: &Path, scene: &Scene) -> Result<Vec<String>, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut names = Vec::new();
    for f in scene.window.frames() {
        let name = frame_file_name(f.frame_index);
        let path = dir.join(&name);
        save_frame(&path, f).map_err(|e| CliError::io(&path, e))?;
        names.push(name);
    }
    let path = dir.join(PROPOSALS_FILE);
    fs::write(&path, proposals_to_json(&scene.proposals) + "\n")
        .map_err(|e| CliError::io(&path, e))?;
    names.push(PROPOSALS_FILE.into());
    write_json(&dir.join(TRUTH_FILE), &scene.truth)?;
    names.push(TRUTH_FILE.into());
    Ok(names)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneFiles {
    pub window: SequenceWindow,
    pub proposals: Vec<Proposal>,
    pub truth: Option<SceneTruth>,
    /// Raw proposal JSON, hashed into manifests.
    pub proposals_text: String,
}

impl SceneFiles {
    /// The last `frames` frames, or the whole scene.
    pub fn tail(self, frames: Option<usize>) -> Result<Self, CliError> {
        let Some(len) = frames else {
            return Ok(self);
        };
        let have = self.window.frames().len();
        if len == 0 || len > have {
            return Err(CliError::Input(format!(
                "{len} frames requested from a {have}-frame scene"
            )));
        }
        Ok(Self {
            window: self.window.tail(len).map_err(CliError::input)?,
            truth: self.truth.map(|t| t.tail(len)),
            ..self
        })
    }

    pub fn has_masks(&self) -> bool {
        self.window
            .frames()
            .iter()
            .all(|f| f.foreground_mask.is_some())
    }

    pub fn into_scene(self) -> Result<Scene, CliError> {
        let truth = self
            .truth
            .ok_or_else(|| CliError::Input(format!("scene has no {TRUTH_FILE}")))?;
        Ok(Scene {
            window: self.window,
            proposals: self.proposals,
            truth,
        })
    }
}

fn frame_paths(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("frame_") && n.ends_with(".msfp"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

pub fn load_scene(dir: &Path) -> Result<SceneFiles, CliError> {
    let frames: Vec<PointCloudFrame> = frame_paths(dir)?
        .iter()
        .map(|p| {
            load_frame(p).map_err(|source| CliError::Format {
                path: p.clone(),
                source,
            })
        })
        .collect::<Result<_, _>>()?;
    if frames.is_empty() {
        return Err(CliError::Input(format!(
            "no frame files in {}",
            dir.display()
        )));
    }
    let window = SequenceWindow::new(frames).map_err(CliError::input)?;
    let path = dir.join(PROPOSALS_FILE);
    let proposals_text = read_text(&path)?;
    let proposals = proposals_from_json(&proposals_text).map_err(|source| match source {
        msf_core::io::FormatError::Json(e) => CliError::json(&path, &e),
        source => CliError::Format {
            path: path.clone(),
            source,
        },
    })?;
    let truth_path = dir.join(TRUTH_FILE);
    let truth = if truth_path.exists() {
        Some(parse_json::<SceneTruth>(&truth_path)?.0)
    } else {
        None
    };
    Ok(SceneFiles {
        window,
        proposals,
        truth,
        proposals_text,
    })
}

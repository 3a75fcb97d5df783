//! JSONL trajectory files: a header line with the run metadata followed by
//! one line per step record.

use serde::{Deserialize, Serialize};
use vperturb_core::train::{StepRecord, Trajectory, TrajectoryMeta, TRAJECTORY_VERSION};

use crate::error::{CliError, CliResult};
use crate::format::to_json_line;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    #[serde(flatten)]
    meta: TrajectoryMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tool_version: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
}

/// Serializes `trajectory`, tagging the header with the tool version and
/// the hash of the configuration that produced it.
pub fn write_trajectory(trajectory: &Trajectory, config_hash: Option<&str>) -> CliResult<String> {
    let header = Header {
        meta: trajectory.meta.clone(),
        tool_version: Some(crate::TOOL_VERSION.to_string()),
        config_hash: config_hash.map(str::to_string),
    };
    let mut out = to_json_line(&header)?;
    out.push('\n');
    for step in &trajectory.steps {
        out.push_str(&to_json_line(step)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_trajectory(text: &str) -> CliResult<Trajectory> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| CliError::Data("trajectory file is empty".to_string()))?;
    let header: Header = serde_json::from_str(first).map_err(|e| CliError::Data(format!("trajectory header: {e}")))?;
    if header.meta.version != TRAJECTORY_VERSION {
        return Err(CliError::Data(format!(
            "unsupported trajectory version {} (expected {TRAJECTORY_VERSION})",
            header.meta.version
        )));
    }
    let steps = lines
        .map(|(i, line)| {
            serde_json::from_str::<StepRecord>(line)
                .map_err(|e| CliError::Data(format!("trajectory line {}: {e}", i + 1)))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let trajectory = Trajectory { meta: header.meta, steps };
    trajectory.validate()?;
    Ok(trajectory)
}

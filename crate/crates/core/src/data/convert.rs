//! Converters from tabular attribute annotations to manifests.
//!
//! Input is a CSV file with a header row `id,split,frames,<group>...`:
//! `frames` is a directory (relative to the CSV file) holding the tracklet's
//! pre-extracted frames, listed in lexicographic order; each group column
//! holds a class name or 0-based class index (multi-class groups), `0`/`1`
//! (binary groups), or is empty when unknown.
//!
//! The MARS-style and Duke-style layouts check that the schema splits into
//! 43 and 37 binary attributes respectively before writing anything.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::manifest::{ManifestRecord, Split};
use crate::error::{Error, Result};
use crate::schema::{AttributeSchema, GroupKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Mars,
    Duke,
    Generic,
}

impl Layout {
    pub fn expected_attributes(self) -> Option<usize> {
        match self {
            Layout::Mars => Some(43),
            Layout::Duke => Some(37),
            Layout::Generic => None,
        }
    }
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mars" => Ok(Layout::Mars),
            "duke" => Ok(Layout::Duke),
            "generic" => Ok(Layout::Generic),
            other => Err(Error::Config(format!("unknown layout '{other}' (mars, duke or generic)"))),
        }
    }
}

const FRAME_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "bmp", "ppm"];

fn list_frames(dir: &Path, base: &Path) -> Result<Vec<String>> {
    let mut frames: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| FRAME_EXTENSIONS.contains(&e.to_lowercase().as_str()))
        })
        .map(|p| p.strip_prefix(base).unwrap_or(&p).to_string_lossy().into_owned())
        .collect();
    frames.sort();
    Ok(frames)
}

fn cell_value(kind: GroupKind, cell: &str) -> Value {
    let cell = cell.trim();
    match (kind, cell) {
        (_, "") => Value::Null,
        (GroupKind::Binary, "1" | "true") => Value::Bool(true),
        (GroupKind::Binary, "0" | "false") => Value::Bool(false),
        (GroupKind::MultiClass, c) => match c.parse::<u64>() {
            Ok(i) => Value::from(i),
            Err(_) => Value::String(c.to_string()),
        },
        (GroupKind::Binary, c) => Value::String(c.to_string()),
    }
}

/// Convert `csv_path` into `out` (a manifest). Frame paths in the output are
/// relative to the manifest's directory. Returns the number of tracklets.
pub fn convert_annotations(csv_path: &Path, schema: &AttributeSchema, layout: Layout, out: &Path) -> Result<usize> {
    if let Some(want) = layout.expected_attributes() {
        if schema.len() != want {
            return Err(Error::Schema(format!(
                "{layout:?} layout expects {want} binary attributes, schema splits into {}",
                schema.len()
            )));
        }
    }
    let base = csv_path.parent().unwrap_or(Path::new("."));
    let out_dir = out.parent().unwrap_or(Path::new("."));
    let mut reader = csv::Reader::from_path(csv_path).map_err(|e| Error::Config(format!("{}: {e}", csv_path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| Error::Config(e.to_string()))?
        .clone();
    let col = |name: &str| header.iter().position(|h| h.trim() == name);
    let (Some(id_col), Some(split_col), Some(frames_col)) = (col("id"), col("split"), col("frames")) else {
        return Err(Error::Config("annotation header must contain id, split and frames columns".into()));
    };
    let group_cols = schema
        .groups
        .iter()
        .map(|g| {
            col(&g.name)
                .map(|c| (g, c))
                .ok_or_else(|| Error::Schema(format!("annotation file has no column for group '{}'", g.name)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut lines = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Manifest {
            line: i + 2,
            msg: e.to_string(),
        })?;
        let get = |c: usize| row.get(c).unwrap_or("").trim().to_string();
        let id = get(id_col);
        get(split_col).parse::<Split>()?;
        let frames_dir = base.join(get(frames_col));
        let frames: Vec<String> = list_frames(&frames_dir, base)?
            .into_iter()
            .map(|f| {
                let abs = base.join(&f);
                abs.strip_prefix(out_dir)
                    .map(|p| p.to_string_lossy().into_owned())
                    .unwrap_or_else(|_| abs.to_string_lossy().into_owned())
            })
            .collect();
        if frames.is_empty() {
            return Err(Error::Tracklet {
                id,
                msg: format!("no frames in {}", frames_dir.display()),
            });
        }
        let group_values: BTreeMap<String, Value> = group_cols
            .iter()
            .map(|(g, c)| (g.name.clone(), cell_value(g.kind, row.get(*c).unwrap_or(""))))
            .collect();
        let rec = ManifestRecord {
            id: id.clone(),
            split: get(split_col),
            frames,
            labels: None,
            group_values: Some(group_values),
        };
        rec.label(schema).map_err(|e| Error::Tracklet {
            id: id.clone(),
            msg: e.to_string(),
        })?;
        lines.push(serde_json::to_string(&rec)?);
    }
    let mut f = fs::File::create(out).map_err(|e| Error::io(out, e))?;
    for l in &lines {
        writeln!(f, "{l}").map_err(|e| Error::io(out, e))?;
    }
    Ok(lines.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::load_manifest;
    use crate::schema::{AttributeGroup, DEFAULT_PROMPT_TEMPLATE};

    fn schema() -> AttributeSchema {
        AttributeSchema::new(
            vec![
                AttributeGroup::multi_class("top color", ["red", "blue"]),
                AttributeGroup::binary("hat"),
            ],
            DEFAULT_PROMPT_TEMPLATE,
        )
        .unwrap()
    }

    #[test]
    fn converts_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        for t in ["t1", "t2"] {
            fs::create_dir_all(dir.path().join(t)).unwrap();
            for k in 0..3 {
                image::RgbImage::new(2, 2).save(dir.path().join(t).join(format!("{k}.png"))).unwrap();
            }
        }
        let csv = dir.path().join("ann.csv");
        fs::write(&csv, "id,split,frames,top color,hat\nt1,train,t1,red,1\nt2,test,t2,1,\n").unwrap();
        let out = dir.path().join("manifest.jsonl");
        assert_eq!(convert_annotations(&csv, &schema(), Layout::Generic, &out).unwrap(), 2);
        let ts = load_manifest(&out, &schema()).unwrap();
        assert_eq!(ts[0].label.values, vec![1, 0, 1]);
        assert_eq!(ts[1].label.values[..2], [0, 1]);
        assert!(!ts[1].label.known[2]);
        assert_eq!(ts[0].frame_paths.len(), 3);
        assert!(ts[0].frame_paths[0].exists());
    }

    #[test]
    fn layouts_refuse_wrong_schemas() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("a.csv");
        fs::write(&csv, "id,split,frames\n").unwrap();
        let err = convert_annotations(&csv, &schema(), Layout::Mars, &dir.path().join("m.jsonl")).unwrap_err();
        assert!(err.to_string().contains("43"));
        assert!(!dir.path().join("m.jsonl").exists());
    }
}

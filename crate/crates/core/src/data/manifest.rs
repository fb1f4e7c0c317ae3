//! Line-delimited JSON manifests, one tracklet per line:
//!
//! ```text
//! {"id": "0001C1T0001", "split": "train", "frames": ["0001/f000.png", ...], "labels": [1, 0, null, ...]}
//! {"id": "0002C1T0001", "split": "test", "frames": [...], "group_values": {"top color": "red", "hat": true, "motion": null}}
//! ```
//!
//! Frame paths are relative to the manifest's directory unless absolute.
//! `null` marks an unknown label (a whole group must be unknown together).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::schema::{AttributeSchema, GroupValue, LabelVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split '{other}' (expected train or test)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tracklet {
    pub id: String,
    pub frame_paths: Vec<PathBuf>,
    pub label: LabelVector,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub split: String,
    pub frames: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<Option<u8>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_values: Option<BTreeMap<String, Value>>,
}

fn group_value(v: &Value) -> Result<Option<GroupValue>> {
    Ok(match v {
        Value::Null => None,
        Value::Bool(b) => Some(GroupValue::Flag(*b)),
        Value::String(s) => Some(GroupValue::Class(s.clone())),
        Value::Number(n) => Some(GroupValue::Index(
            n.as_u64()
                .ok_or_else(|| Error::Label(format!("class index {n} is not a non-negative integer")))? as usize,
        )),
        other => return Err(Error::Label(format!("unsupported group value {other}"))),
    })
}

impl ManifestRecord {
    pub fn label(&self, schema: &AttributeSchema) -> Result<LabelVector> {
        let label = match (&self.labels, &self.group_values) {
            (Some(bits), None) => {
                if bits.len() != schema.len() {
                    return Err(Error::Label(format!(
                        "label length {} does not match schema size {}",
                        bits.len(),
                        schema.len()
                    )));
                }
                let mut l = LabelVector::unknown(bits.len());
                for (j, b) in bits.iter().enumerate() {
                    match b {
                        Some(0) => l.set(j, false),
                        Some(1) => l.set(j, true),
                        Some(v) => return Err(Error::Label(format!("non-binary label value {v}"))),
                        None => {}
                    }
                }
                l
            }
            (None, Some(map)) => {
                if let Some(k) = map.keys().find(|k| !schema.groups.iter().any(|g| &g.name == *k)) {
                    return Err(Error::Label(format!("unknown attribute group '{k}'")));
                }
                let values = schema
                    .groups
                    .iter()
                    .map(|g| map.get(&g.name).map_or(Ok(None), group_value))
                    .collect::<Result<Vec<_>>>()?;
                schema.labels_from_group_values(&values)?
            }
            (Some(_), Some(_)) => return Err(Error::Label("give either labels or group_values, not both".into())),
            (None, None) => return Err(Error::Label("record has neither labels nor group_values".into())),
        };
        label.validate(schema)?;
        Ok(label)
    }

    pub fn from_tracklet(t: &Tracklet, base: &Path) -> Self {
        Self {
            id: t.id.clone(),
            split: match t.split {
                Split::Train => "train".into(),
                Split::Test => "test".into(),
            },
            frames: t
                .frame_paths
                .iter()
                .map(|p| p.strip_prefix(base).unwrap_or(p).to_string_lossy().into_owned())
                .collect(),
            labels: Some(
                t.label
                    .values
                    .iter()
                    .zip(&t.label.known)
                    .map(|(&v, &k)| k.then_some(v))
                    .collect(),
            ),
            group_values: None,
        }
    }
}

/// Parse and validate every record. Missing frame files are reported later,
/// when the frame is read.
pub fn load_manifest(path: &Path, schema: &AttributeSchema) -> Result<Vec<Tracklet>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| Error::Manifest {
            line: i + 1,
            msg: e.to_string(),
        })?;
        let wrap = |e: Error| Error::Tracklet {
            id: rec.id.clone(),
            msg: e.to_string(),
        };
        let split: Split = rec.split.parse().map_err(wrap)?;
        if rec.frames.is_empty() {
            return Err(wrap(Error::Label("no frames listed".into())));
        }
        let label = rec.label(schema).map_err(wrap)?;
        out.push(Tracklet {
            id: rec.id.clone(),
            frame_paths: rec.frames.iter().map(|f| base.join(f)).collect(),
            label,
            split,
        });
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, tracklets: &[Tracklet]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for t in tracklets {
        let line = serde_json::to_string(&ManifestRecord::from_tracklet(t, base))?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::AttributeGroup;

    fn schema() -> AttributeSchema {
        AttributeSchema::new(
            vec![
                AttributeGroup::multi_class("top color", ["red", "blue", "green"]),
                AttributeGroup::binary("hat"),
            ],
            crate::schema::DEFAULT_PROMPT_TEMPLATE,
        )
        .unwrap()
    }

    fn write(lines: &[&str]) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        fs::write(&p, lines.join("\n")).unwrap();
        (dir, p)
    }

    #[test]
    fn loads_bits_and_group_values() {
        let (dir, p) = write(&[
            r#"{"id":"a","split":"train","frames":["a/0.png","a/1.png"],"labels":[1,0,0,1]}"#,
            r#"{"id":"b","split":"test","frames":["b/0.png"],"group_values":{"top color":"green","hat":null}}"#,
        ]);
        let ts = load_manifest(&p, &schema()).unwrap();
        assert_eq!(ts.len(), 2);
        assert_eq!(ts[0].label.values, vec![1, 0, 0, 1]);
        assert_eq!(ts[0].frame_paths[1], dir.path().join("a/1.png"));
        assert_eq!(ts[1].split, Split::Test);
        assert_eq!(ts[1].label.values[..3], [0, 0, 1]);
        assert!(!ts[1].label.known[3]);
    }

    #[test]
    fn wrong_length_names_the_tracklet() {
        let (_d, p) = write(&[r#"{"id":"short-one","split":"train","frames":["x.png"],"labels":[1,0,0]}"#]);
        let err = load_manifest(&p, &schema()).unwrap_err().to_string();
        assert!(err.contains("short-one"), "{err}");
    }

    #[test]
    fn bad_split_and_broken_one_hot_rejected() {
        let (_d, p) = write(&[r#"{"id":"s","split":"val","frames":["x.png"],"labels":[1,0,0,1]}"#]);
        assert!(load_manifest(&p, &schema()).is_err());
        let (_d, p) = write(&[r#"{"id":"s","split":"train","frames":["x.png"],"labels":[1,1,0,1]}"#]);
        assert!(load_manifest(&p, &schema()).is_err());
    }

    #[test]
    fn round_trip() {
        let (dir, p) = write(&[
            r#"{"id":"a","split":"train","frames":["a/0.png"],"labels":[0,1,0,null]}"#,
        ]);
        let ts = load_manifest(&p, &schema()).unwrap();
        let q = dir.path().join("again.jsonl");
        write_manifest(&q, &ts).unwrap();
        assert_eq!(load_manifest(&q, &schema()).unwrap(), ts);
    }
}

//! Attribute vocabulary: groups, the multi-class → binary split, prompt
//! sentences for the text tower, and training-set positive ratios.
//!
//! The schema file is the single source of attribute order. Labels, logits
//! and metrics are all index-aligned to [`AttributeSchema::binary_attributes`].

use std::collections::HashSet;
use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_PROMPT_TEMPLATE: &str = "The attribute {attribute} of this pedestrian is {value}";

/// Slot value used for standalone binary attributes.
pub const PRESENT_VALUE: &str = "present";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupKind {
    #[serde(rename = "binary")]
    Binary,
    #[serde(rename = "multi-class")]
    MultiClass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeGroup {
    pub name: String,
    pub kind: GroupKind,
    #[serde(default)]
    pub classes: Vec<String>,
}

impl AttributeGroup {
    pub fn binary(name: impl Into<String>) -> Self {
        let name = name.into();
        Self {
            classes: vec![name.clone()],
            name,
            kind: GroupKind::Binary,
        }
    }

    pub fn multi_class<S: Into<String>>(name: impl Into<String>, classes: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.into(),
            kind: GroupKind::MultiClass,
            classes: classes.into_iter().map(Into::into).collect(),
        }
    }

    /// Number of binary attributes this group contributes.
    pub fn width(&self) -> usize {
        match self.kind {
            GroupKind::Binary => 1,
            GroupKind::MultiClass => self.classes.len(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Schema("group with empty name".into()));
        }
        let mut seen = HashSet::new();
        for c in &self.classes {
            if !seen.insert(c.as_str()) {
                return Err(Error::Schema(format!("group '{}': duplicate class '{c}'", self.name)));
            }
        }
        match self.kind {
            GroupKind::MultiClass if self.classes.len() < 2 => Err(Error::Schema(format!(
                "multi-class group '{}' needs at least 2 classes",
                self.name
            ))),
            GroupKind::Binary if self.classes.len() > 1 => Err(Error::Schema(format!(
                "binary group '{}' must list at most one class",
                self.name
            ))),
            _ => Ok(()),
        }
    }
}

/// One entry of the flat binary attribute list, with the slot pair used to
/// fill the prompt template.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryAttribute {
    pub name: String,
    pub group: usize,
    /// Attribute noun (the group name).
    pub noun: String,
    /// Value phrase: the class name for multi-class groups, `None` for
    /// standalone binary attributes.
    pub value: Option<String>,
}

/// Split groups into the flat, ordered binary attribute list: group order,
/// then class order. A multi-class group `g` with classes `c1..cC` yields
/// `"g c1" .. "g cC"`; a binary group yields its own name.
pub fn split_to_binary(groups: &[AttributeGroup]) -> Result<Vec<BinaryAttribute>> {
    if groups.is_empty() {
        return Err(Error::Schema("schema has no attribute groups".into()));
    }
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (gi, g) in groups.iter().enumerate() {
        g.validate()?;
        let mut push = |name: String, value: Option<String>| -> Result<()> {
            if !seen.insert(name.clone()) {
                return Err(Error::Schema(format!("duplicate binary attribute name '{name}'")));
            }
            out.push(BinaryAttribute {
                name,
                group: gi,
                noun: g.name.clone(),
                value,
            });
            Ok(())
        };
        match g.kind {
            GroupKind::Binary => push(g.name.clone(), None)?,
            GroupKind::MultiClass => {
                for c in &g.classes {
                    push(format!("{} {}", g.name, c), Some(c.clone()))?;
                }
            }
        }
    }
    Ok(out)
}

/// Fill the prompt template for one binary attribute.
///
/// `{attribute}` receives the noun and `{value}` the value phrase (or
/// `"present"` for standalone binary attributes). A template without a
/// `{value}` slot is filled with the full attribute name in `{attribute}`.
pub fn expand_attribute_to_sentence(attribute: &BinaryAttribute, template: &str) -> String {
    if template.contains("{value}") {
        let value = attribute.value.as_deref().unwrap_or(PRESENT_VALUE);
        template
            .replace("{attribute}", &attribute.noun)
            .replace("{value}", value)
    } else {
        template.replace("{attribute}", &attribute.name)
    }
}

/// Per-attribute positive ratios `r_j` over a label collection. Unknown
/// entries are skipped; an attribute with no known entries gets 0.
pub fn compute_positive_ratios(labels: &[LabelVector]) -> Result<Vec<f64>> {
    let (pos, known) = positive_counts(labels)?;
    Ok(pos
        .iter()
        .zip(&known)
        .map(|(&p, &n)| if n == 0 { 0.0 } else { p as f64 / n as f64 })
        .collect())
}

/// Raw (positive, known) counts per attribute; ratios from disjoint shards
/// merge exactly by summing these.
pub fn positive_counts(labels: &[LabelVector]) -> Result<(Vec<u64>, Vec<u64>)> {
    let first = labels
        .first()
        .ok_or_else(|| Error::Label("cannot compute positive ratios of an empty collection".into()))?;
    let m = first.len();
    let mut pos = vec![0u64; m];
    let mut known = vec![0u64; m];
    for (i, l) in labels.iter().enumerate() {
        if l.len() != m {
            return Err(Error::Label(format!("label vector {i} has length {}, expected {m}", l.len())));
        }
        for j in 0..m {
            if l.known[j] {
                known[j] += 1;
                pos[j] += u64::from(l.values[j]);
            }
        }
    }
    Ok((pos, known))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SchemaFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    groups: Vec<AttributeGroup>,
    #[serde(default = "default_template")]
    prompt_template: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    positive_ratios: Option<Vec<f64>>,
}

fn default_template() -> String {
    DEFAULT_PROMPT_TEMPLATE.to_string()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributeSchema {
    pub name: Option<String>,
    pub groups: Vec<AttributeGroup>,
    pub prompt_template: String,
    pub positive_ratios: Option<Vec<f64>>,
    binary: Vec<BinaryAttribute>,
    ranges: Vec<Range<usize>>,
}

impl AttributeSchema {
    pub fn new(groups: Vec<AttributeGroup>, prompt_template: impl Into<String>) -> Result<Self> {
        let mut groups = groups;
        for g in &mut groups {
            if g.kind == GroupKind::Binary && g.classes.is_empty() {
                g.classes.push(g.name.clone());
            }
        }
        let prompt_template = prompt_template.into();
        if !prompt_template.contains("{attribute}") {
            return Err(Error::Schema("prompt_template must contain an {attribute} slot".into()));
        }
        let binary = split_to_binary(&groups)?;
        let mut ranges = Vec::with_capacity(groups.len());
        let mut start = 0;
        for g in &groups {
            ranges.push(start..start + g.width());
            start += g.width();
        }
        Ok(Self {
            name: None,
            groups,
            prompt_template,
            positive_ratios: None,
            binary,
            ranges,
        })
    }

    pub fn with_positive_ratios(mut self, ratios: Vec<f64>) -> Result<Self> {
        if ratios.len() != self.len() {
            return Err(Error::Schema(format!(
                "positive_ratios has length {}, expected {}",
                ratios.len(),
                self.len()
            )));
        }
        if let Some(bad) = ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Schema(format!("positive ratio {bad} outside [0, 1]")));
        }
        self.positive_ratios = Some(ratios);
        Ok(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SchemaFile = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        let mut schema = Self::new(file.groups, file.prompt_template)?;
        schema.name = file.name;
        match file.positive_ratios {
            Some(r) => schema.with_positive_ratios(r),
            None => Ok(schema),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Schema(msg) => Error::Schema(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        let file = SchemaFile {
            name: self.name.clone(),
            groups: self.groups.clone(),
            prompt_template: self.prompt_template.clone(),
            positive_ratios: self.positive_ratios.clone(),
        };
        serde_json::to_string_pretty(&file).expect("schema serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Hex SHA-256 of the canonical JSON form, ignoring positive ratios.
    pub fn fingerprint(&self) -> String {
        let file = SchemaFile {
            name: None,
            groups: self.groups.clone(),
            prompt_template: self.prompt_template.clone(),
            positive_ratios: None,
        };
        let bytes = serde_json::to_vec(&file).expect("schema serializes");
        let digest = Sha256::digest(bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Number of binary attributes `M`.
    pub fn len(&self) -> usize {
        self.binary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.binary.is_empty()
    }

    pub fn binary_attributes(&self) -> &[BinaryAttribute] {
        &self.binary
    }

    pub fn attribute_names(&self) -> Vec<String> {
        self.binary.iter().map(|a| a.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.binary.iter().position(|a| a.name == name)
    }

    /// Binary-index range of each group, in group order.
    pub fn group_ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn sentences(&self) -> Vec<String> {
        self.binary
            .iter()
            .map(|a| expand_attribute_to_sentence(a, &self.prompt_template))
            .collect()
    }

    /// Build a label vector from per-group values. `None` marks the group
    /// unknown for this tracklet.
    pub fn labels_from_group_values(&self, values: &[Option<GroupValue>]) -> Result<LabelVector> {
        if values.len() != self.groups.len() {
            return Err(Error::Label(format!(
                "{} group values for {} groups",
                values.len(),
                self.groups.len()
            )));
        }
        let mut label = LabelVector::unknown(self.len());
        for ((g, range), v) in self.groups.iter().zip(&self.ranges).zip(values) {
            let Some(v) = v else { continue };
            match (g.kind, v) {
                (GroupKind::Binary, GroupValue::Flag(b)) => label.set(range.start, *b),
                (GroupKind::MultiClass, GroupValue::Class(c)) => {
                    let ci = g
                        .classes
                        .iter()
                        .position(|x| x == c)
                        .ok_or_else(|| Error::Label(format!("group '{}' has no class '{c}'", g.name)))?;
                    for k in range.clone() {
                        label.set(k, k - range.start == ci);
                    }
                }
                (GroupKind::MultiClass, GroupValue::Index(ci)) => {
                    if *ci >= g.classes.len() {
                        return Err(Error::Label(format!("group '{}' has no class index {ci}", g.name)));
                    }
                    for k in range.clone() {
                        label.set(k, k - range.start == *ci);
                    }
                }
                (GroupKind::Binary, GroupValue::Index(i)) if *i <= 1 => label.set(range.start, *i == 1),
                _ => {
                    return Err(Error::Label(format!("value {v:?} does not fit group '{}'", g.name)));
                }
            }
        }
        Ok(label)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GroupValue {
    Flag(bool),
    Class(String),
    Index(usize),
}

/// Binary label vector `y ∈ {0,1}^M` with a per-entry known mask.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelVector {
    pub values: Vec<u8>,
    pub known: Vec<bool>,
}

impl LabelVector {
    pub fn from_bits(bits: &[u8]) -> Self {
        Self {
            values: bits.to_vec(),
            known: vec![true; bits.len()],
        }
    }

    pub fn unknown(m: usize) -> Self {
        Self {
            values: vec![0; m],
            known: vec![false; m],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn set(&mut self, j: usize, positive: bool) {
        self.values[j] = u8::from(positive);
        self.known[j] = true;
    }

    /// Check length, binary values and the one-hot constraint of every fully
    /// known multi-class group. Partially known groups are rejected.
    pub fn validate(&self, schema: &AttributeSchema) -> Result<()> {
        if self.len() != schema.len() || self.known.len() != schema.len() {
            return Err(Error::Label(format!(
                "label length {} does not match schema size {}",
                self.len(),
                schema.len()
            )));
        }
        if let Some(v) = self.values.iter().find(|&&v| v > 1) {
            return Err(Error::Label(format!("non-binary label value {v}")));
        }
        for (g, range) in schema.groups.iter().zip(schema.group_ranges()) {
            if g.kind != GroupKind::MultiClass {
                continue;
            }
            let known = self.known[range.clone()].iter().filter(|&&k| k).count();
            if known == 0 {
                continue;
            }
            if known != range.len() {
                return Err(Error::Label(format!("group '{}' is only partially labelled", g.name)));
            }
            let ones = self.values[range.clone()].iter().filter(|&&v| v == 1).count();
            if ones != 1 {
                return Err(Error::Label(format!(
                    "group '{}' must be one-hot, found {ones} positive classes",
                    g.name
                )));
            }
        }
        Ok(())
    }
}

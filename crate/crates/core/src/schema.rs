//! Attribute schemas and annotation tables.
//!
//! An [`AttributeSchema`] names the label attribute and the shift attributes of a
//! dataset together with their value sets. An [`AnnotationTable`] is the instance
//! pool: one row per instance, each assigning every schema attribute a declared
//! value. Values are kept as indices into the canonical (declaration) order, so
//! every downstream tie-break follows that order.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("attribute `{0}` must declare at least two distinct values")]
    TooFewValues(String),
    #[error("attribute `{attribute}` declares value `{value}` twice")]
    DuplicateValue { attribute: String, value: String },
    #[error("attribute name `{0}` is used more than once")]
    DuplicateAttribute(String),
    #[error("column `{0}` is missing from the annotation header")]
    MissingColumn(String),
    #[error("column `{0}` is not part of the schema")]
    UnexpectedColumn(String),
    #[error("row {row}: value `{value}` is not declared for attribute `{attribute}`")]
    UnknownValue {
        row: usize,
        attribute: String,
        value: String,
    },
    #[error("instance id `{0}` appears more than once")]
    DuplicateId(String),
    #[error("annotation table has no rows")]
    MissingRows,
    #[error("row {row} has {found} fields, expected {expected}")]
    RowWidth {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("unknown built-in dataset `{0}`")]
    UnknownDataset(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One attribute and its ordered value set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawAttribute")]
pub struct AttributeDef {
    pub name: String,
    pub values: Vec<String>,
}

#[derive(Deserialize)]
struct RawAttribute {
    name: String,
    values: Vec<String>,
}

impl TryFrom<RawAttribute> for AttributeDef {
    type Error = SchemaError;

    fn try_from(raw: RawAttribute) -> Result<Self, Self::Error> {
        AttributeDef::new(raw.name, raw.values)
    }
}

impl AttributeDef {
    pub fn new<S: Into<String>>(
        name: impl Into<String>,
        values: impl IntoIterator<Item = S>,
    ) -> Result<Self, SchemaError> {
        let name = name.into();
        let values: Vec<String> = values.into_iter().map(Into::into).collect();
        let mut seen = HashSet::new();
        for v in &values {
            if !seen.insert(v.as_str()) {
                return Err(SchemaError::DuplicateValue {
                    attribute: name.clone(),
                    value: v.clone(),
                });
            }
        }
        if values.len() < 2 {
            return Err(SchemaError::TooFewValues(name));
        }
        Ok(Self { name, values })
    }

    pub fn cardinality(&self) -> usize {
        self.values.len()
    }

    pub fn index_of(&self, value: &str) -> Option<usize> {
        self.values.iter().position(|v| v == value)
    }
}

/// Label attribute plus the ordered shift attributes of a dataset.
///
/// Attribute position 0 is always the label; shift attribute `k` sits at
/// position `k + 1`. Full combinations are laid out row-major in that order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema")]
pub struct AttributeSchema {
    pub dataset: String,
    pub label: AttributeDef,
    #[serde(rename = "attributes")]
    pub shift_attributes: Vec<AttributeDef>,
}

#[derive(Deserialize)]
struct RawSchema {
    dataset: String,
    label: AttributeDef,
    attributes: Vec<AttributeDef>,
}

impl TryFrom<RawSchema> for AttributeSchema {
    type Error = SchemaError;

    fn try_from(raw: RawSchema) -> Result<Self, Self::Error> {
        AttributeSchema::new(raw.dataset, raw.label, raw.attributes)
    }
}

impl AttributeSchema {
    pub fn new(
        dataset: impl Into<String>,
        label: AttributeDef,
        shift_attributes: Vec<AttributeDef>,
    ) -> Result<Self, SchemaError> {
        let mut names = HashSet::new();
        for attr in std::iter::once(&label).chain(&shift_attributes) {
            if !names.insert(attr.name.as_str()) {
                return Err(SchemaError::DuplicateAttribute(attr.name.clone()));
            }
        }
        Ok(Self {
            dataset: dataset.into(),
            label,
            shift_attributes,
        })
    }

    pub fn from_json_str(s: &str) -> Result<Self, SchemaError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SchemaError> {
        let mut s = String::new();
        File::open(path)?.read_to_string(&mut s)?;
        Self::from_json_str(&s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SchemaError> {
        let mut f = File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    /// Number of attributes including the label (K).
    pub fn attribute_count(&self) -> usize {
        1 + self.shift_attributes.len()
    }

    /// Attribute at canonical position `pos` (0 = label).
    pub fn attribute(&self, pos: usize) -> &AttributeDef {
        if pos == 0 {
            &self.label
        } else {
            &self.shift_attributes[pos - 1]
        }
    }

    pub fn attributes(&self) -> impl Iterator<Item = &AttributeDef> {
        std::iter::once(&self.label).chain(self.shift_attributes.iter())
    }

    /// Canonical position of the attribute called `name`.
    pub fn position(&self, name: &str) -> Option<usize> {
        self.attributes().position(|a| a.name == name)
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.attributes().map(AttributeDef::cardinality).collect()
    }

    /// Number of full attribute combinations.
    pub fn cell_count(&self) -> usize {
        self.cardinalities().iter().product()
    }

    /// Row-major flat index of a full combination.
    pub fn flat_index(&self, combo: &[usize]) -> usize {
        combo
            .iter()
            .zip(self.attributes())
            .fold(0, |acc, (&v, a)| acc * a.cardinality() + v)
    }

    /// Inverse of [`flat_index`](Self::flat_index).
    pub fn combination(&self, mut flat: usize) -> Vec<usize> {
        let cards = self.cardinalities();
        let mut combo = vec![0; cards.len()];
        for (slot, &card) in combo.iter_mut().zip(&cards).rev() {
            *slot = flat % card;
            flat /= card;
        }
        combo
    }

    /// Human-readable key of a combination, e.g. `square|red|orange|small`.
    pub fn combination_key(&self, combo: &[usize]) -> String {
        combo
            .iter()
            .zip(self.attributes())
            .map(|(&v, a)| a.values[v].as_str())
            .collect::<Vec<_>>()
            .join("|")
    }

    /// Schemas of the five controlled datasets (label plus three shift attributes each).
    pub fn builtin(name: &str) -> Result<Self, SchemaError> {
        let (label, attrs): (Attr, [Attr; 3]) = match name {
            "dsprites" => (
                ("object shape", &["square", "ellipse", "heart"]),
                [
                    ("object color", &["red", "yellow", "blue"]),
                    ("background color", &["orange", "green", "purple"]),
                    ("object size", &["small", "middle", "big"]),
                ],
            ),
            "shapes3d" => (
                ("object shape", &["cube", "cylinder", "sphere", "capsule"]),
                [
                    ("object color", &["red", "orange", "yellow", "green"]),
                    ("background color", &["red", "orange", "yellow", "green"]),
                    ("object size", &["tiny", "small", "middle", "big"]),
                ],
            ),
            "smallnorb" => (
                ("object", &["animal", "human", "car", "truck", "airplane"]),
                [
                    ("azimuth", &["0", "80", "160", "240", "320"]),
                    ("lighting", &["0", "1", "2", "3", "4"]),
                    ("elevation", &["30", "40", "50", "60", "70"]),
                ],
            ),
            "celeba" => (
                ("gender", &["male", "female"]),
                [
                    ("hair color", &["black", "others"]),
                    ("smiling", &["smiling", "no smiling"]),
                    ("hair style", &["straight", "others"]),
                ],
            ),
            "deepfashion" => (
                ("dress", &["skirt", "others"]),
                [
                    ("pattern", &["floral", "solid"]),
                    ("sleeve", &["long sleeve", "sleeveless"]),
                    ("fabric", &["chiffon", "cotton"]),
                ],
            ),
            other => return Err(SchemaError::UnknownDataset(other.to_string())),
        };
        let def = |(n, vs): Attr| AttributeDef::new(n, vs.iter().copied());
        Self::new(
            name,
            def(label)?,
            attrs.into_iter().map(def).collect::<Result<_, _>>()?,
        )
    }

    pub const BUILTIN_DATASETS: [&'static str; 5] =
        ["dsprites", "shapes3d", "smallnorb", "celeba", "deepfashion"];
}

type Attr = (&'static str, &'static [&'static str]);

/// One annotated instance. `values[pos]` indexes into attribute `pos`'s value list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationRow {
    pub instance_id: String,
    pub values: Vec<usize>,
}

/// A validated instance pool.
#[derive(Debug, Clone)]
pub struct AnnotationTable {
    schema: AttributeSchema,
    rows: Vec<AnnotationRow>,
    by_id: HashMap<String, usize>,
}

impl AnnotationTable {
    pub fn new(schema: AttributeSchema, rows: Vec<AnnotationRow>) -> Result<Self, SchemaError> {
        if rows.is_empty() {
            return Err(SchemaError::MissingRows);
        }
        let cards = schema.cardinalities();
        let mut by_id = HashMap::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            if row.values.len() != cards.len() {
                return Err(SchemaError::RowWidth {
                    row: i,
                    found: row.values.len(),
                    expected: cards.len(),
                });
            }
            for (pos, (&v, &card)) in row.values.iter().zip(&cards).enumerate() {
                if v >= card {
                    return Err(SchemaError::UnknownValue {
                        row: i,
                        attribute: schema.attribute(pos).name.clone(),
                        value: v.to_string(),
                    });
                }
            }
            if by_id.insert(row.instance_id.clone(), i).is_some() {
                return Err(SchemaError::DuplicateId(row.instance_id.clone()));
            }
        }
        Ok(Self {
            schema,
            rows,
            by_id,
        })
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn rows(&self) -> &[AnnotationRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row_index(&self, instance_id: &str) -> Option<usize> {
        self.by_id.get(instance_id).copied()
    }

    pub fn get(&self, instance_id: &str) -> Option<&AnnotationRow> {
        self.row_index(instance_id).map(|i| &self.rows[i])
    }

    /// Attribute name → value string for one row.
    pub fn assignment(&self, row: usize) -> BTreeMap<&str, &str> {
        self.rows[row]
            .values
            .iter()
            .enumerate()
            .map(|(pos, &v)| {
                let a = self.schema.attribute(pos);
                (a.name.as_str(), a.values[v].as_str())
            })
            .collect()
    }

    /// Parses a CSV with header `instance_id,<attr>...`. Columns may appear in any
    /// order but must match the schema's attribute names exactly.
    pub fn from_reader<R: Read>(reader: R, schema: AttributeSchema) -> Result<Self, SchemaError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let header = rdr.headers()?.clone();
        let id_col = header
            .iter()
            .position(|h| h == "instance_id")
            .ok_or_else(|| SchemaError::MissingColumn("instance_id".into()))?;
        let mut columns = Vec::with_capacity(schema.attribute_count());
        for attr in schema.attributes() {
            let col = header
                .iter()
                .position(|h| h == attr.name)
                .ok_or_else(|| SchemaError::MissingColumn(attr.name.clone()))?;
            columns.push(col);
        }
        if let Some(extra) = header
            .iter()
            .enumerate()
            .find(|(i, _)| *i != id_col && !columns.contains(i))
        {
            return Err(SchemaError::UnexpectedColumn(extra.1.to_string()));
        }

        let mut rows = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            let mut values = Vec::with_capacity(columns.len());
            for (pos, &col) in columns.iter().enumerate() {
                let attr = schema.attribute(pos);
                let cell = &record[col];
                let v = attr
                    .index_of(cell)
                    .ok_or_else(|| SchemaError::UnknownValue {
                        row: i,
                        attribute: attr.name.clone(),
                        value: cell.to_string(),
                    })?;
                values.push(v);
            }
            rows.push(AnnotationRow {
                instance_id: record[id_col].to_string(),
                values,
            });
        }
        Self::new(schema, rows)
    }

    /// Writes the table in canonical column order.
    pub fn to_writer<W: Write>(&self, writer: W) -> Result<(), SchemaError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["instance_id"];
        header.extend(self.schema.attributes().map(|a| a.name.as_str()));
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.instance_id.as_str()];
            rec.extend(
                row.values
                    .iter()
                    .enumerate()
                    .map(|(pos, &v)| self.schema.attribute(pos).values[v].as_str()),
            );
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn load_table(
    path: impl AsRef<Path>,
    schema: AttributeSchema,
) -> Result<AnnotationTable, SchemaError> {
    AnnotationTable::from_reader(File::open(path)?, schema)
}

pub fn write_table(table: &AnnotationTable, path: impl AsRef<Path>) -> Result<(), SchemaError> {
    table.to_writer(File::create(path)?)
}

/// Instances grouped by full attribute combination.
#[derive(Debug, Clone)]
pub struct CellIndex {
    cells: BTreeMap<usize, Vec<usize>>,
}

impl CellIndex {
    /// Row indices of a cell, in table order.
    pub fn rows(&self, flat: usize) -> &[usize] {
        self.cells.get(&flat).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Number of non-empty cells.
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[usize])> {
        self.cells.iter().map(|(&k, v)| (k, v.as_slice()))
    }

    pub fn instance_ids<'t>(&self, table: &'t AnnotationTable, flat: usize) -> Vec<&'t str> {
        self.rows(flat)
            .iter()
            .map(|&r| table.rows()[r].instance_id.as_str())
            .collect()
    }
}

pub fn cell_index(table: &AnnotationTable) -> CellIndex {
    let mut cells: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, row) in table.rows().iter().enumerate() {
        cells
            .entry(table.schema().flat_index(&row.values))
            .or_default()
            .push(i);
    }
    CellIndex { cells }
}

//! Per-sample metadata that defines cross-modal correspondence.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Modality {
    Image,
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ManifestRow {
    pub id: String,
    pub modality: Modality,
    pub source_id: String,
    #[cfg_attr(
        feature = "serde",
        serde(default, skip_serializing_if = "Option::is_none")
    )]
    pub group_id: Option<String>,
    #[cfg_attr(
        feature = "serde",
        serde(default, skip_serializing_if = "Option::is_none")
    )]
    pub class_label: Option<String>,
}

/// Rows in load order; row `i` describes row `i` of the embedding set it is
/// bound to.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    rows: Vec<ManifestRow>,
}

/// String keys mapped to dense ids in order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interned {
    pub ids: Vec<u32>,
    pub names: Vec<String>,
}

fn intern<'a>(keys: impl Iterator<Item = &'a str>) -> Interned {
    let mut lookup: BTreeMap<&str, u32> = BTreeMap::new();
    let mut names = Vec::new();
    let ids = keys
        .map(|k| {
            *lookup.entry(k).or_insert_with(|| {
                names.push(String::from(k));
                (names.len() - 1) as u32
            })
        })
        .collect();
    Interned { ids, names }
}

impl Manifest {
    /// Builds a manifest; ids must be unique.
    pub fn new(rows: Vec<ManifestRow>) -> Result<Self> {
        let mut seen = BTreeMap::new();
        for (i, row) in rows.iter().enumerate() {
            if seen.insert(row.id.as_str(), i).is_some() {
                return Err(Error::DuplicateId(row.id.clone()));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[ManifestRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.rows.iter().position(|r| r.id == id)
    }

    /// Dense group ids per row. Every row must carry a group id.
    pub fn group_index(&self) -> Result<Interned> {
        if let Some(i) = self.rows.iter().position(|r| r.group_id.is_none()) {
            return Err(Error::MissingGroup(i));
        }
        Ok(intern(
            self.rows.iter().map(|r| r.group_id.as_deref().unwrap()),
        ))
    }

    /// Dense class ids per row. Every row must carry a class label.
    pub fn class_index(&self) -> Result<Interned> {
        if let Some(i) = self.rows.iter().position(|r| r.class_label.is_none()) {
            return Err(Error::MissingLabel(i));
        }
        Ok(intern(
            self.rows.iter().map(|r| r.class_label.as_deref().unwrap()),
        ))
    }

    /// Checks that `self` and `other` describe the same sources row by row,
    /// which is what a paired (bijective) dataset requires.
    pub fn check_paired(&self, other: &Manifest) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::CountMismatch(self.len(), other.len()));
        }
        for (i, (a, b)) in self.rows.iter().zip(&other.rows).enumerate() {
            if a.source_id != b.source_id {
                return Err(Error::InvalidParameter(alloc::format!(
                    "row {i}: source id {:?} does not match {:?}",
                    a.source_id,
                    b.source_id
                )));
            }
        }
        Ok(())
    }

    /// Checks that each source id appears at most once per modality.
    pub fn check_bijective(&self) -> Result<()> {
        let mut seen = BTreeMap::new();
        for row in &self.rows {
            if seen
                .insert((row.modality, row.source_id.as_str()), ())
                .is_some()
            {
                return Err(Error::DuplicateId(row.source_id.clone()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::{format, vec};

    fn row(i: usize, group: Option<&str>) -> ManifestRow {
        ManifestRow {
            id: format!("r{i}"),
            modality: Modality::Image,
            source_id: format!("s{i}"),
            group_id: group.map(String::from),
            class_label: None,
        }
    }

    #[test]
    fn rejects_duplicate_ids() {
        let rows = vec![row(0, None), row(0, None)];
        assert_eq!(Manifest::new(rows), Err(Error::DuplicateId("r0".into())));
    }

    #[test]
    fn groups_intern_in_first_appearance_order() {
        let m = Manifest::new(vec![
            row(0, Some("b")),
            row(1, Some("a")),
            row(2, Some("b")),
        ])
        .unwrap();
        let g = m.group_index().unwrap();
        assert_eq!(g.ids, vec![0, 1, 0]);
        assert_eq!(g.names, vec!["b", "a"]);
    }

    #[test]
    fn missing_group_and_label() {
        let m = Manifest::new(vec![row(0, Some("a")), row(1, None)]).unwrap();
        assert_eq!(m.group_index(), Err(Error::MissingGroup(1)));
        assert_eq!(m.class_index(), Err(Error::MissingLabel(0)));
    }
}

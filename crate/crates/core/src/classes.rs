//! Raw label ids to evaluation classes, with the thing/stuff split.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Evaluation id reserved for ignored points.
pub const IGNORE: u32 = 0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub id: u32,
    pub name: String,
    #[serde(default)]
    pub thing: bool,
    /// Raw label ids folded into this class.
    pub raw: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMapSpec {
    #[serde(rename = "class")]
    pub classes: Vec<ClassEntry>,
    /// Raw ids mapped to the ignore class.
    #[serde(default)]
    pub ignore_raw: Vec<u32>,
    /// Treat raw ids that appear nowhere in the map as ignored instead of failing.
    #[serde(default)]
    pub unknown_as_ignore: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    to_eval: BTreeMap<u32, u32>,
    names: BTreeMap<u32, String>,
    things: BTreeSet<u32>,
    unknown_as_ignore: bool,
    spec: ClassMapSpec,
}

impl ClassMap {
    pub fn from_spec(spec: ClassMapSpec) -> Result<Self> {
        let mut to_eval = BTreeMap::new();
        let mut names = BTreeMap::new();
        let mut things = BTreeSet::new();
        for raw in &spec.ignore_raw {
            to_eval.insert(*raw, IGNORE);
        }
        for c in &spec.classes {
            if c.id == IGNORE {
                return Err(Error::Config(format!(
                    "class {:?} uses id {IGNORE}, which is reserved for ignore",
                    c.name
                )));
            }
            if names.insert(c.id, c.name.clone()).is_some() {
                return Err(Error::Config(format!("duplicate class id {}", c.id)));
            }
            if c.thing {
                things.insert(c.id);
            }
            for raw in &c.raw {
                if to_eval.insert(*raw, c.id).is_some() {
                    return Err(Error::Config(format!("raw id {raw} mapped twice")));
                }
            }
        }
        Ok(ClassMap {
            to_eval,
            names,
            things,
            unknown_as_ignore: spec.unknown_as_ignore,
            spec,
        })
    }

    /// The SemanticKITTI 19-class training split over raw dataset ids.
    pub fn semantic_kitti() -> Self {
        let table: &[(u32, &str, bool, &[u32])] = &[
            (1, "car", true, &[10, 252]),
            (2, "bicycle", true, &[11]),
            (3, "motorcycle", true, &[15]),
            (4, "truck", true, &[18, 258]),
            (5, "other-vehicle", true, &[13, 16, 20, 256, 257, 259]),
            (6, "person", true, &[30, 254]),
            (7, "bicyclist", true, &[31, 253]),
            (8, "motorcyclist", true, &[32, 255]),
            (9, "road", false, &[40, 60]),
            (10, "parking", false, &[44]),
            (11, "sidewalk", false, &[48]),
            (12, "other-ground", false, &[49]),
            (13, "building", false, &[50]),
            (14, "fence", false, &[51]),
            (15, "vegetation", false, &[70]),
            (16, "trunk", false, &[71]),
            (17, "terrain", false, &[72]),
            (18, "pole", false, &[80]),
            (19, "traffic-sign", false, &[81]),
        ];
        let spec = ClassMapSpec {
            classes: table
                .iter()
                .map(|(id, name, thing, raw)| ClassEntry {
                    id: *id,
                    name: name.to_string(),
                    thing: *thing,
                    raw: raw.to_vec(),
                })
                .collect(),
            ignore_raw: vec![0, 1, 52, 99],
            unknown_as_ignore: false,
        };
        ClassMap::from_spec(spec).expect("built-in class map is consistent")
    }

    /// A map where raw ids are evaluation ids.
    pub fn identity(classes: &[(u32, &str, bool)]) -> Result<Self> {
        ClassMap::from_spec(ClassMapSpec {
            classes: classes
                .iter()
                .map(|(id, name, thing)| ClassEntry {
                    id: *id,
                    name: name.to_string(),
                    thing: *thing,
                    raw: vec![*id],
                })
                .collect(),
            ignore_raw: vec![IGNORE],
            unknown_as_ignore: false,
        })
    }

    pub fn spec(&self) -> &ClassMapSpec {
        &self.spec
    }

    pub fn to_eval(&self, raw: u32) -> Result<u32> {
        match self.to_eval.get(&raw) {
            Some(id) => Ok(*id),
            None if self.unknown_as_ignore => Ok(IGNORE),
            None => Err(Error::UnknownClass(raw)),
        }
    }

    /// Evaluation classes, ignore excluded, ascending.
    pub fn classes(&self) -> impl Iterator<Item = u32> + '_ {
        self.names.keys().copied()
    }

    pub fn num_classes(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, id: u32) -> &str {
        self.names.get(&id).map(String::as_str).unwrap_or("ignore")
    }

    pub fn is_thing(&self, eval_id: u32) -> bool {
        self.things.contains(&eval_id)
    }

    pub fn is_thing_raw(&self, raw: u32) -> bool {
        self.to_eval
            .get(&raw)
            .is_some_and(|id| self.things.contains(id))
    }

    pub fn is_ignore_raw(&self, raw: u32) -> bool {
        match self.to_eval.get(&raw) {
            Some(id) => *id == IGNORE,
            None => self.unknown_as_ignore,
        }
    }

    pub fn things(&self) -> &BTreeSet<u32> {
        &self.things
    }

    /// Raw ids that map onto thing classes.
    pub fn thing_raw_ids(&self) -> BTreeSet<u32> {
        self.to_eval
            .iter()
            .filter(|(_, id)| self.things.contains(id))
            .map(|(raw, _)| *raw)
            .collect()
    }
}

impl Default for ClassMap {
    fn default() -> Self {
        ClassMap::semantic_kitti()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kitti_map() {
        let m = ClassMap::semantic_kitti();
        assert_eq!(m.num_classes(), 19);
        assert_eq!(m.to_eval(10).unwrap(), 1);
        assert_eq!(m.to_eval(252).unwrap(), 1);
        assert_eq!(m.to_eval(0).unwrap(), IGNORE);
        assert!(m.is_thing_raw(30));
        assert!(!m.is_thing_raw(40));
        assert!(matches!(m.to_eval(7), Err(Error::UnknownClass(7))));
        assert_eq!(m.things().len(), 8);
    }

    #[test]
    fn rejects_ignore_id_as_class() {
        assert!(ClassMap::identity(&[(0, "bad", false)]).is_err());
    }

    #[test]
    fn toml_roundtrip() {
        let text = r#"
            ignore_raw = [0]
            [[class]]
            id = 1
            name = "car"
            thing = true
            raw = [10]
            [[class]]
            id = 2
            name = "road"
            raw = [40]
        "#;
        let spec: ClassMapSpec = toml::from_str(text).unwrap();
        let m = ClassMap::from_spec(spec).unwrap();
        assert!(m.is_thing(1));
        assert!(!m.is_thing(2));
        assert_eq!(m.to_eval(40).unwrap(), 2);
    }
}

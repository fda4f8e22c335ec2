//! NUTS/LAU region hierarchy.
//!
//! Regions form a forest rooted at NUTS0 (country) nodes. Every other node
//! has exactly one parent exactly one level coarser, which also rules out
//! cycles: levels strictly decrease along any parent chain.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SpatialLevel {
    #[serde(rename = "NUTS0")]
    Nuts0,
    #[serde(rename = "NUTS1")]
    Nuts1,
    #[serde(rename = "NUTS2")]
    Nuts2,
    #[serde(rename = "NUTS3")]
    Nuts3,
    #[serde(rename = "LAU")]
    Lau,
}

impl SpatialLevel {
    pub const ALL: [SpatialLevel; 5] = [
        SpatialLevel::Nuts0,
        SpatialLevel::Nuts1,
        SpatialLevel::Nuts2,
        SpatialLevel::Nuts3,
        SpatialLevel::Lau,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SpatialLevel::Nuts0 => "NUTS0",
            SpatialLevel::Nuts1 => "NUTS1",
            SpatialLevel::Nuts2 => "NUTS2",
            SpatialLevel::Nuts3 => "NUTS3",
            SpatialLevel::Lau => "LAU",
        }
    }

    /// The next coarser level, `None` for NUTS0.
    pub fn coarser(self) -> Option<SpatialLevel> {
        match self {
            SpatialLevel::Nuts0 => None,
            SpatialLevel::Nuts1 => Some(SpatialLevel::Nuts0),
            SpatialLevel::Nuts2 => Some(SpatialLevel::Nuts1),
            SpatialLevel::Nuts3 => Some(SpatialLevel::Nuts2),
            SpatialLevel::Lau => Some(SpatialLevel::Nuts3),
        }
    }
}

impl fmt::Display for SpatialLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SpatialLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SpatialLevel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::UnknownLevel(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionNode {
    pub code: String,
    pub level: SpatialLevel,
    pub parent: Option<String>,
    pub country: String,
}

#[derive(Clone, Debug, Default)]
pub struct RegionHierarchy {
    nodes: BTreeMap<String, RegionNode>,
    // sorted child codes per node
    children: BTreeMap<String, Vec<String>>,
}

pub const HIERARCHY_HEADER: [&str; 4] = ["code", "level", "parent", "country"];

impl RegionHierarchy {
    /// Builds and validates a hierarchy from its nodes.
    pub fn from_nodes(nodes: impl IntoIterator<Item = RegionNode>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for node in nodes {
            if map.contains_key(&node.code) {
                return Err(Error::DuplicateCode(node.code));
            }
            map.insert(node.code.clone(), node);
        }
        let mut children: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for node in map.values() {
            validate_node(node, &map)?;
            if let Some(parent) = &node.parent {
                children.entry(parent.clone()).or_default().push(node.code.clone());
            }
        }
        // BTreeMap iteration already yields codes in order, so the child lists are sorted.
        Ok(RegionHierarchy {
            nodes: map,
            children,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_reader(file).map_err(|e| match e {
            Error::Csv { source, .. } => Error::Csv {
                path: path.to_path_buf(),
                source,
            },
            other => other,
        })
    }

    /// Parses the `code,level,parent,country` CSV form. Errors on individual
    /// rows are tagged with their 1-based line number.
    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(csv_err)?.clone();
        if headers.iter().ne(HIERARCHY_HEADER) {
            return Err(Error::BadHeader {
                expected: HIERARCHY_HEADER.join(","),
                found: headers.iter().collect::<Vec<_>>().join(","),
            });
        }
        let mut nodes = Vec::new();
        let mut lines = BTreeMap::new();
        for record in rdr.records() {
            let record = record.map_err(csv_err)?;
            let line = record.position().map_or(0, |p| p.line());
            let level: SpatialLevel = record[1].parse().map_err(|e: Error| e.at_line(line))?;
            let parent = match &record[2] {
                "" => None,
                p => Some(p.to_string()),
            };
            if lines.insert(record[0].to_string(), line).is_some() {
                return Err(Error::DuplicateCode(record[0].to_string()).at_line(line));
            }
            nodes.push(RegionNode {
                code: record[0].to_string(),
                level,
                parent,
                country: record[3].to_string(),
            });
        }
        Self::from_nodes(nodes).map_err(|e| match offending_code(&e) {
            Some(code) => match lines.get(code) {
                Some(&line) => e.at_line(line),
                None => e,
            },
            None => e,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn get(&self, code: &str) -> Option<&RegionNode> {
        self.nodes.get(code)
    }

    pub fn node(&self, code: &str) -> Result<&RegionNode> {
        self.nodes
            .get(code)
            .ok_or_else(|| Error::UnknownRegion(code.to_string()))
    }

    pub fn contains(&self, code: &str) -> bool {
        self.nodes.contains_key(code)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &RegionNode> {
        self.nodes.values()
    }

    pub fn children(&self, code: &str) -> &[String] {
        self.children.get(code).map_or(&[], Vec::as_slice)
    }

    /// Country codes (NUTS0 roots), sorted.
    pub fn countries(&self) -> Vec<&str> {
        self.nodes
            .values()
            .filter(|n| n.level == SpatialLevel::Nuts0)
            .map(|n| n.code.as_str())
            .collect()
    }

    /// All region codes at `level`, optionally restricted to one country, sorted.
    pub fn regions_at(&self, level: SpatialLevel, country: Option<&str>) -> Vec<String> {
        self.nodes
            .values()
            .filter(|n| n.level == level && country.is_none_or(|c| n.country == c))
            .map(|n| n.code.clone())
            .collect()
    }

    /// All regions at `target` below `code`, sorted; `[code]` itself when
    /// `target` is the node's own level.
    pub fn descendants(&self, code: &str, target: SpatialLevel) -> Result<Vec<String>> {
        let node = self.node(code)?;
        if target < node.level {
            return Err(Error::TargetCoarserThanSource {
                code: code.to_string(),
                level: node.level,
                target,
            });
        }
        let mut frontier = vec![node.code.clone()];
        let mut level = node.level;
        while level < target {
            frontier = frontier
                .iter()
                .flat_map(|c| self.children(c).iter().cloned())
                .collect();
            level = SpatialLevel::ALL[level as usize + 1];
        }
        frontier.sort();
        Ok(frontier)
    }

    /// The unique ancestor of `code` at `target` (the node itself when the
    /// levels coincide).
    pub fn ancestor(&self, code: &str, target: SpatialLevel) -> Result<&str> {
        let mut node = self.node(code)?;
        if target > node.level {
            return Err(Error::TargetFinerThanSource {
                code: code.to_string(),
                level: node.level,
                target,
            });
        }
        while node.level > target {
            node = node
                .parent
                .as_deref()
                .and_then(|p| self.nodes.get(p))
                .ok_or_else(|| Error::NoAncestor {
                    code: code.to_string(),
                    target,
                })?;
        }
        Ok(&node.code)
    }
}

fn validate_node(node: &RegionNode, map: &BTreeMap<String, RegionNode>) -> Result<()> {
    match (&node.parent, node.level.coarser()) {
        (None, None) => {
            if node.code != node.country {
                return Err(Error::MalformedRoot(node.code.clone()));
            }
        }
        (Some(_), None) => return Err(Error::MalformedRoot(node.code.clone())),
        (None, Some(_)) => return Err(Error::MissingParent(node.code.clone())),
        (Some(parent), Some(expected)) => {
            let p = map.get(parent).ok_or_else(|| Error::DanglingParent {
                code: node.code.clone(),
                parent: parent.clone(),
            })?;
            if p.level != expected {
                return Err(Error::ParentLevelMismatch {
                    code: node.code.clone(),
                    level: node.level,
                    parent: parent.clone(),
                    parent_level: p.level,
                });
            }
            if p.country != node.country {
                return Err(Error::CountryMismatch {
                    code: node.code.clone(),
                    country: node.country.clone(),
                    parent: parent.clone(),
                });
            }
        }
    }
    Ok(())
}

fn offending_code(e: &Error) -> Option<&str> {
    match e {
        Error::DuplicateCode(c)
        | Error::MissingParent(c)
        | Error::MalformedRoot(c)
        | Error::DanglingParent { code: c, .. }
        | Error::ParentLevelMismatch { code: c, .. }
        | Error::CountryMismatch { code: c, .. } => Some(c),
        _ => None,
    }
}

fn csv_err(source: csv::Error) -> Error {
    Error::Csv {
        path: "<hierarchy>".into(),
        source,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(csv: &str) -> Result<RegionHierarchy> {
        RegionHierarchy::from_reader(csv.as_bytes())
    }

    const CHAIN: &str = "code,level,parent,country
DE,NUTS0,,DE
DE1,NUTS1,DE,DE
DE11,NUTS2,DE1,DE
DE111,NUTS3,DE11,DE
DE_0003,LAU,DE111,DE
DE_0001,LAU,DE111,DE
DE_0002,LAU,DE111,DE
";

    #[test]
    fn minimal_chain() {
        let h = parse("code,level,parent,country\nDE,NUTS0,,DE\nDE1,NUTS1,DE,DE\n").unwrap();
        assert_eq!(h.len(), 2);
        assert_eq!(h.node("DE1").unwrap().parent.as_deref(), Some("DE"));
        assert_eq!(h.descendants("DE", SpatialLevel::Nuts1).unwrap(), ["DE1"]);
    }

    #[test]
    fn dangling_parent() {
        let err = parse("code,level,parent,country\nDE,NUTS0,,DE\nDE1,NUTS1,XX,DE\n").unwrap_err();
        assert!(matches!(err.root(), Error::DanglingParent { parent, .. } if parent == "XX"));
        assert!(matches!(err, Error::AtLine { line: 3, .. }));
    }

    #[test]
    fn five_level_chain() {
        let h = parse(CHAIN).unwrap();
        assert_eq!(h.ancestor("DE_0001", SpatialLevel::Nuts0).unwrap(), "DE");
        assert_eq!(h.ancestor("DE111", SpatialLevel::Nuts3).unwrap(), "DE111");
        assert_eq!(
            h.descendants("DE111", SpatialLevel::Lau).unwrap(),
            ["DE_0001", "DE_0002", "DE_0003"]
        );
        assert_eq!(h.descendants("DE", SpatialLevel::Lau).unwrap().len(), 3);
        assert_eq!(h.descendants("DE11", SpatialLevel::Nuts2).unwrap(), ["DE11"]);
    }

    #[test]
    fn query_errors() {
        let h = parse(CHAIN).unwrap();
        assert!(matches!(
            h.descendants("DE1", SpatialLevel::Nuts0),
            Err(Error::TargetCoarserThanSource { .. })
        ));
        assert!(matches!(h.ancestor("XX", SpatialLevel::Nuts0), Err(Error::UnknownRegion(_))));
        assert!(matches!(
            h.ancestor("DE1", SpatialLevel::Nuts3),
            Err(Error::TargetFinerThanSource { .. })
        ));
    }

    #[test]
    fn load_errors() {
        let dup = "code,level,parent,country\nDE,NUTS0,,DE\nDE,NUTS0,,DE\n";
        assert!(matches!(parse(dup).unwrap_err().root(), Error::DuplicateCode(_)));

        let lvl = "code,level,parent,country\nDE,NUTS9,,DE\n";
        assert!(matches!(parse(lvl).unwrap_err().root(), Error::UnknownLevel(_)));

        let skip = "code,level,parent,country\nDE,NUTS0,,DE\nDE11,NUTS2,DE,DE\n";
        assert!(matches!(
            parse(skip).unwrap_err().root(),
            Error::ParentLevelMismatch { .. }
        ));

        // A self-loop is necessarily a level violation.
        let cyc = "code,level,parent,country\nDE,NUTS0,,DE\nDE1,NUTS1,DE1,DE\n";
        assert!(matches!(
            parse(cyc).unwrap_err().root(),
            Error::ParentLevelMismatch { .. }
        ));

        let orphan = "code,level,parent,country\nDE1,NUTS1,,DE\n";
        assert!(matches!(parse(orphan).unwrap_err().root(), Error::MissingParent(_)));

        let root = "code,level,parent,country\nXX,NUTS0,,DE\n";
        assert!(matches!(parse(root).unwrap_err().root(), Error::MalformedRoot(_)));

        let header = "code,level,country\nDE,NUTS0,DE\n";
        assert!(matches!(parse(header).unwrap_err(), Error::BadHeader { .. }));
    }

    #[test]
    fn level_order_and_tokens() {
        assert!(SpatialLevel::Lau > SpatialLevel::Nuts3);
        assert!(SpatialLevel::Nuts0 < SpatialLevel::Nuts1);
        for l in SpatialLevel::ALL {
            assert_eq!(l.as_str().parse::<SpatialLevel>().unwrap(), l);
        }
    }
}

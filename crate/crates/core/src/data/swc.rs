use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SwcError {
    #[error("line {line}: malformed record `{content}`")]
    Malformed { line: usize, content: String },
    #[error("duplicate node id {0}")]
    DuplicateId(i64),
    #[error("node {id} references missing parent {parent}")]
    DanglingParent { id: i64, parent: i64 },
    #[error("parent chain through node {0} forms a cycle")]
    Cycle(i64),
}

/// One traced sample point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwcNode {
    pub id: i64,
    pub type_code: i32,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub radius: f64,
    /// `-1` for roots.
    pub parent: i64,
}

impl SwcNode {
    /// Position as (z, y, x), matching volume axis order.
    pub fn zyx(&self) -> [f64; 3] {
        [self.z, self.y, self.x]
    }
}

/// A validated trace: unique ids, existing parents, no cycles.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SwcMorphology {
    nodes: Vec<SwcNode>,
}

impl SwcMorphology {
    pub fn new(nodes: Vec<SwcNode>) -> Result<Self, SwcError> {
        let mut index = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id, i).is_some() {
                return Err(SwcError::DuplicateId(n.id));
            }
        }
        let mut parent_of = vec![None; nodes.len()];
        for (i, n) in nodes.iter().enumerate() {
            if n.parent >= 0 {
                let p = *index.get(&n.parent).ok_or(SwcError::DanglingParent {
                    id: n.id,
                    parent: n.parent,
                })?;
                parent_of[i] = Some(p);
            }
        }
        // 0 unvisited, 1 on the current chain, 2 known to reach a root.
        let mut state = vec![0u8; nodes.len()];
        let mut chain = Vec::new();
        for start in 0..nodes.len() {
            let mut cur = Some(start);
            while let Some(i) = cur {
                match state[i] {
                    2 => break,
                    1 => return Err(SwcError::Cycle(nodes[i].id)),
                    _ => {
                        state[i] = 1;
                        chain.push(i);
                        cur = parent_of[i];
                    }
                }
            }
            for i in chain.drain(..) {
                state[i] = 2;
            }
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[SwcNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// (parent, child) index pairs into [`SwcMorphology::nodes`].
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let index: BTreeMap<i64, usize> = self.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.parent >= 0)
            .map(|(i, n)| (index[&n.parent], i))
            .collect()
    }

    /// Multiplies positions per axis; radii scale with the in-plane (x)
    /// factor.
    pub fn scaled(&self, sx: f64, sy: f64, sz: f64) -> Self {
        let nodes = self
            .nodes
            .iter()
            .map(|n| SwcNode {
                x: n.x * sx,
                y: n.y * sy,
                z: n.z * sz,
                radius: n.radius * sx,
                ..*n
            })
            .collect();
        Self { nodes }
    }

    /// Standard seven-column text, one node per line.
    pub fn to_swc_string(&self) -> String {
        let mut out = String::from("# id type x y z radius parent\n");
        for n in &self.nodes {
            let _ = writeln!(out, "{} {} {} {} {} {} {}", n.id, n.type_code, n.x, n.y, n.z, n.radius, n.parent);
        }
        out
    }
}

pub fn parse_swc(text: &str) -> Result<SwcMorphology, SwcError> {
    let mut nodes = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || SwcError::Malformed {
            line: i + 1,
            content: line.to_string(),
        };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 7 {
            return Err(bad());
        }
        let real = |s: &str| s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(bad);
        let node = SwcNode {
            id: f[0].parse().map_err(|_| bad())?,
            type_code: f[1].parse().map_err(|_| bad())?,
            x: real(f[2])?,
            y: real(f[3])?,
            z: real(f[4])?,
            radius: real(f[5])?,
            parent: f[6].parse().map_err(|_| bad())?,
        };
        if node.radius < 0.0 {
            return Err(bad());
        }
        nodes.push(node);
    }
    SwcMorphology::new(nodes)
}

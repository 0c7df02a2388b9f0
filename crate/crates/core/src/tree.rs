//! Arena storage for lazily grown rooted trees.
//!
//! Vertices are appended once and never move, so a [`VertexId`] stays
//! valid for the lifetime of the arena. Children of one vertex are
//! realized in a single call and stored as a contiguous id range.

use std::io::Write;

use crate::error::Error;
use crate::Result;

/// Index into a [`Tree`] arena.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VertexId(pub u32);

const UNREALIZED: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Vertex {
    parent: u32, // UNREALIZED marks the root
    depth: u32,
    first_child: u32,
    n_children: u32, // UNREALIZED until realize_children
}

/// Growable rooted tree; the root exists from construction.
#[derive(Debug, Clone)]
pub struct Tree {
    vertices: Vec<Vertex>,
}

impl Default for Tree {
    fn default() -> Self {
        Self::new()
    }
}

impl Tree {
    pub fn new() -> Self {
        Self {
            vertices: vec![Vertex {
                parent: UNREALIZED,
                depth: 0,
                first_child: 0,
                n_children: UNREALIZED,
            }],
        }
    }

    /// Drops everything but a fresh root; arena capacity is kept.
    pub fn reset(&mut self) {
        self.vertices.clear();
        self.vertices.push(Vertex {
            parent: UNREALIZED,
            depth: 0,
            first_child: 0,
            n_children: UNREALIZED,
        });
    }

    pub fn root(&self) -> VertexId {
        VertexId(0)
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the root always exists
    }

    pub fn depth(&self, v: VertexId) -> u32 {
        self.vertices[v.0 as usize].depth
    }

    pub fn parent(&self, v: VertexId) -> Option<VertexId> {
        let p = self.vertices[v.0 as usize].parent;
        (p != UNREALIZED).then_some(VertexId(p))
    }

    /// Number of realized children, or `None` before realization.
    pub fn child_count(&self, v: VertexId) -> Option<u64> {
        let n = self.vertices[v.0 as usize].n_children;
        (n != UNREALIZED).then_some(n as u64)
    }

    pub fn is_realized(&self, v: VertexId) -> bool {
        self.vertices[v.0 as usize].n_children != UNREALIZED
    }

    /// `index` is 1-based to match the walk's band labelling.
    /// Panics if out of range or unrealized; walk code validates first.
    pub fn child(&self, v: VertexId, index: u64) -> VertexId {
        let vertex = &self.vertices[v.0 as usize];
        assert!(vertex.n_children != UNREALIZED, "children not realized");
        assert!(
            index >= 1 && index <= vertex.n_children as u64,
            "child index {index} out of 1..={}",
            vertex.n_children
        );
        VertexId(vertex.first_child + (index as u32 - 1))
    }

    /// Appends `count` children to `v` and returns the first new id;
    /// ids are contiguous. Fails on a second call for the same vertex.
    pub fn realize_children(&mut self, v: VertexId, count: u64) -> Result<VertexId> {
        let idx = v.0 as usize;
        if self.vertices[idx].n_children != UNREALIZED {
            return Err(Error::AlreadyRealized { id: v.0 });
        }
        assert!(count >= 1, "leafless trees require count >= 1");
        let first = self.vertices.len() as u32;
        let depth = self.vertices[idx].depth + 1;
        self.vertices[idx].first_child = first;
        self.vertices[idx].n_children = count as u32;
        for _ in 0..count {
            self.vertices.push(Vertex {
                parent: v.0,
                depth,
                first_child: 0,
                n_children: UNREALIZED,
            });
        }
        Ok(VertexId(first))
    }

    /// Debug dump, one `id parent depth n_children` line per vertex
    /// (`-` for the root's parent and for unrealized child counts).
    pub fn dump_debug<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (id, v) in self.vertices.iter().enumerate() {
            let parent = if v.parent == UNREALIZED {
                "-".to_string()
            } else {
                v.parent.to_string()
            };
            let kids = if v.n_children == UNREALIZED {
                "-".to_string()
            } else {
                v.n_children.to_string()
            };
            writeln!(w, "{id} {parent} {} {kids}", v.depth)?;
        }
        Ok(())
    }
}

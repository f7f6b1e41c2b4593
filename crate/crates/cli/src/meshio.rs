//! Plain-text surface-patch mesh format.
//!
//! The format is whitespace-delimited with `#` line comments:
//!
//! ```text
//! nodes <n>
//! <x> <y> <z>          # n lines
//! quads <m>
//! <a> <b> <c> <d>      # m lines, counter-clockwise corner node indices
//! boundary <k>         # four blocks: left, bottom, right, top chains
//! <i0> <i1> ... <ik-1> # ordered node indices along the chain
//! ```
//!
//! The four boundary chains must share corner nodes the way the flattening
//! stage expects: left and bottom start at the same node, bottom ends where
//! right starts, left ends where top starts, and right and top share their
//! final node.

use std::path::Path;

use mftd_core::mapping::SurfacePatchMesh;

use crate::error::CliError;

struct Tokens<'a> {
    words: Vec<&'a str>,
    cursor: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let words = text
            .lines()
            .map(|line| match line.find('#') {
                Some(pos) => &line[..pos],
                None => line,
            })
            .flat_map(str::split_whitespace)
            .collect();
        Self { words, cursor: 0 }
    }

    fn next(&mut self) -> Option<&'a str> {
        let word = self.words.get(self.cursor).copied();
        self.cursor += 1;
        word
    }

    fn keyword_with_count(&mut self, name: &str) -> Result<usize, CliError> {
        match self.next() {
            Some(word) if word == name => {}
            Some(word) => return Err(bad(format!("expected `{name}`, found `{word}`"))),
            None => return Err(bad(format!("expected `{name}`, found end of file"))),
        }
        let count = self
            .next()
            .ok_or_else(|| bad(format!("`{name}` is missing its count")))?;
        count
            .parse::<usize>()
            .map_err(|_| bad(format!("`{name}` count `{count}` is not a non-negative integer")))
    }

    fn number(&mut self, what: &str) -> Result<f64, CliError> {
        let token = self
            .next()
            .ok_or_else(|| bad(format!("unexpected end of file in {what}")))?;
        token
            .parse::<f64>()
            .map_err(|_| bad(format!("bad number `{token}` in {what}")))
    }

    fn index(&mut self, what: &str, node_count: usize) -> Result<usize, CliError> {
        let token = self
            .next()
            .ok_or_else(|| bad(format!("unexpected end of file in {what}")))?;
        let idx = token
            .parse::<usize>()
            .map_err(|_| bad(format!("bad index `{token}` in {what}")))?;
        if idx >= node_count {
            return Err(bad(format!("index {idx} out of range in {what}")));
        }
        Ok(idx)
    }
}

fn bad(msg: String) -> CliError {
    CliError::config(format!("mesh file: {msg}"))
}

/// Parses the text format into a mesh (structure is validated later by the
/// flattening stage; this only checks the file's grammar).
pub fn parse_mesh(text: &str) -> Result<SurfacePatchMesh, CliError> {
    let mut tokens = Tokens::new(text);

    let node_count = tokens.keyword_with_count("nodes")?;
    let mut positions = Vec::with_capacity(node_count);
    for i in 0..node_count {
        let what = format!("node {i}");
        positions.push([
            tokens.number(&what)?,
            tokens.number(&what)?,
            tokens.number(&what)?,
        ]);
    }

    let quad_count = tokens.keyword_with_count("quads")?;
    let mut quads = Vec::with_capacity(quad_count);
    for i in 0..quad_count {
        let what = format!("quad {i}");
        quads.push([
            tokens.index(&what, node_count)?,
            tokens.index(&what, node_count)?,
            tokens.index(&what, node_count)?,
            tokens.index(&what, node_count)?,
        ]);
    }

    let mut boundaries: [Vec<usize>; 4] = Default::default();
    for (side, chain) in boundaries.iter_mut().enumerate() {
        let len = tokens.keyword_with_count("boundary")?;
        let what = format!("boundary {side}");
        for _ in 0..len {
            chain.push(tokens.index(&what, node_count)?);
        }
    }

    if let Some(extra) = tokens.next() {
        return Err(bad(format!("trailing content starting at `{extra}`")));
    }

    Ok(SurfacePatchMesh {
        positions,
        quads,
        boundaries,
    })
}

/// Reads and parses a mesh file.
pub fn read_mesh(path: &Path) -> Result<SurfacePatchMesh, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_mesh(&text)
}

/// Serializes a mesh back to the text format.
pub fn write_mesh_text(mesh: &SurfacePatchMesh) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(out, "nodes {}", mesh.positions.len());
    for p in &mesh.positions {
        let _ = writeln!(out, "{} {} {}", p[0], p[1], p[2]);
    }
    let _ = writeln!(out, "quads {}", mesh.quads.len());
    for q in &mesh.quads {
        let _ = writeln!(out, "{} {} {} {}", q[0], q[1], q[2], q[3]);
    }
    for chain in &mesh.boundaries {
        let _ = writeln!(out, "boundary {}", chain.len());
        let words: Vec<String> = chain.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(out, "{}", words.join(" "));
    }
    out
}

/// A structured m×p quad patch over arbitrary node positions, with the four
/// boundary chains wired the way the flattening stage expects. Used by the
/// tests and handy for generating fixture meshes.
pub fn structured_patch(
    m: usize,
    p: usize,
    position: impl Fn(f64, f64) -> [f64; 3],
) -> SurfacePatchMesh {
    assert!(m >= 1 && p >= 1);
    let node = |i: usize, j: usize| j * (m + 1) + i;
    let mut positions = Vec::with_capacity((m + 1) * (p + 1));
    for j in 0..=p {
        for i in 0..=m {
            positions.push(position(i as f64 / m as f64, j as f64 / p as f64));
        }
    }
    let mut quads = Vec::with_capacity(m * p);
    for j in 0..p {
        for i in 0..m {
            quads.push([node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)]);
        }
    }
    let left: Vec<usize> = (0..=p).map(|j| node(0, j)).collect();
    let bottom: Vec<usize> = (0..=m).map(|i| node(i, 0)).collect();
    let right: Vec<usize> = (0..=p).map(|j| node(m, j)).collect();
    let top: Vec<usize> = (0..=m).map(|i| node(i, p)).collect();
    SurfacePatchMesh {
        positions,
        quads,
        boundaries: [left, bottom, right, top],
    }
}

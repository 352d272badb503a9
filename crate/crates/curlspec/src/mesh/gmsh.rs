//! Reader for the Gmsh MSH ASCII format, versions 2.2 and 4.1.
//!
//! Only the subset needed here is supported: nodes, 4-node tetrahedra,
//! 3-node boundary triangles, and physical tags. Binary files and other
//! versions are rejected with a distinct error.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::TetMesh;

struct Lines<'a> {
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines {
            iter: text.lines().enumerate(),
        }
    }

    /// Next non-empty line, trimmed, with its 1-based number.
    fn next(&mut self) -> Option<(usize, &'a str)> {
        for (i, line) in self.iter.by_ref() {
            let t = line.trim();
            if !t.is_empty() {
                return Some((i + 1, t));
            }
        }
        None
    }

    fn expect(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.next().ok_or_else(|| Error::MeshParse {
            line: 0,
            msg: format!("unexpected end of file, expected {what}"),
        })
    }
}

fn parse<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.parse().map_err(|_| Error::MeshParse {
        line,
        msg: format!("cannot parse {what} from {tok:?}"),
    })
}

fn tokens(line: &str) -> impl Iterator<Item = &str> {
    line.split_whitespace()
}

/// Read a Gmsh MSH ASCII file (version 2.2 or 4.1) into a [`TetMesh`].
///
/// Physical-group tags of boundary triangles are preserved as region tags.
/// Tets with negative orientation in the file are reordered.
pub fn read_gmsh<P: AsRef<Path>>(path: P) -> Result<TetMesh> {
    let text = std::fs::read_to_string(path)?;
    read_gmsh_str(&text)
}

/// Same as [`read_gmsh`] but from an in-memory string.
pub fn read_gmsh_str(text: &str) -> Result<TetMesh> {
    let mut lines = Lines::new(text);
    let (ln, header) = lines.expect("$MeshFormat")?;
    if header != "$MeshFormat" {
        return Err(Error::MeshParse {
            line: ln,
            msg: format!("expected $MeshFormat, found {header:?}"),
        });
    }
    let (ln, fmt) = lines.expect("format line")?;
    let mut it = tokens(fmt);
    let version = it.next().unwrap_or("");
    let file_type: u32 = parse(it.next().unwrap_or(""), ln, "file type")?;
    if file_type != 0 {
        return Err(Error::UnsupportedFormat(
            "binary MSH files are not supported".into(),
        ));
    }
    match version {
        "2.2" => read_msh2(lines),
        "4.1" => read_msh4(lines),
        v => Err(Error::UnsupportedFormat(format!(
            "MSH version {v} (only ASCII 2.2 and 4.1 are supported)"
        ))),
    }
}

struct RawMesh {
    vertices: Vec<[f64; 3]>,
    tets: Vec<[usize; 4]>,
    face_tags: BTreeMap<[usize; 3], i64>,
}

impl RawMesh {
    fn finish(self) -> Result<TetMesh> {
        if self.tets.is_empty() {
            return Err(Error::NoTetrahedra);
        }
        TetMesh::from_cells(self.vertices, self.tets, &self.face_tags)
    }
}

fn remap(tag: usize, map: &BTreeMap<usize, usize>, line: usize) -> Result<usize> {
    map.get(&tag).copied().ok_or_else(|| Error::MeshParse {
        line,
        msg: format!("element references unknown node tag {tag}"),
    })
}

fn read_msh2(mut lines: Lines) -> Result<TetMesh> {
    let mut raw = RawMesh {
        vertices: Vec::new(),
        tets: Vec::new(),
        face_tags: BTreeMap::new(),
    };
    let mut node_map: BTreeMap<usize, usize> = BTreeMap::new();

    while let Some((ln, line)) = lines.next() {
        match line {
            "$EndMeshFormat" | "$EndNodes" | "$EndElements" => {}
            "$Nodes" => {
                let (ln2, count) = lines.expect("node count")?;
                let n: usize = parse(count, ln2, "node count")?;
                for _ in 0..n {
                    let (ln3, l) = lines.expect("node line")?;
                    let mut it = tokens(l);
                    let tag: usize = parse(it.next().unwrap_or(""), ln3, "node tag")?;
                    let x: f64 = parse(it.next().unwrap_or(""), ln3, "x")?;
                    let y: f64 = parse(it.next().unwrap_or(""), ln3, "y")?;
                    let z: f64 = parse(it.next().unwrap_or(""), ln3, "z")?;
                    node_map.insert(tag, raw.vertices.len());
                    raw.vertices.push([x, y, z]);
                }
            }
            "$Elements" => {
                let (ln2, count) = lines.expect("element count")?;
                let n: usize = parse(count, ln2, "element count")?;
                for _ in 0..n {
                    let (ln3, l) = lines.expect("element line")?;
                    let mut it = tokens(l);
                    let _tag: usize = parse(it.next().unwrap_or(""), ln3, "element tag")?;
                    let ty: u32 = parse(it.next().unwrap_or(""), ln3, "element type")?;
                    let ntags: usize = parse(it.next().unwrap_or(""), ln3, "tag count")?;
                    let mut tags = Vec::with_capacity(ntags);
                    for _ in 0..ntags {
                        tags.push(parse::<i64>(it.next().unwrap_or(""), ln3, "tag")?);
                    }
                    let rest: Vec<&str> = it.collect();
                    match ty {
                        2 => {
                            let mut f = [0usize; 3];
                            for (i, slot) in f.iter_mut().enumerate() {
                                let t: usize =
                                    parse(rest.get(i).copied().unwrap_or(""), ln3, "node")?;
                                *slot = remap(t, &node_map, ln3)?;
                            }
                            f.sort_unstable();
                            let phys = tags.first().copied().unwrap_or(0);
                            raw.face_tags.insert(f, phys);
                        }
                        4 => {
                            let mut tet = [0usize; 4];
                            for (i, slot) in tet.iter_mut().enumerate() {
                                let t: usize =
                                    parse(rest.get(i).copied().unwrap_or(""), ln3, "node")?;
                                *slot = remap(t, &node_map, ln3)?;
                            }
                            raw.tets.push(tet);
                        }
                        _ => {} // points, lines, other element types: ignored
                    }
                }
            }
            s if s.starts_with('$') => {
                // Skip unknown sections wholesale.
                let end = format!("$End{}", &s[1..]);
                loop {
                    let (_, l) = lines.expect(&end)?;
                    if l == end {
                        break;
                    }
                }
            }
            _ => {
                return Err(Error::MeshParse {
                    line: ln,
                    msg: format!("unexpected content {line:?}"),
                })
            }
        }
    }
    raw.finish()
}

fn read_msh4(mut lines: Lines) -> Result<TetMesh> {
    let mut raw = RawMesh {
        vertices: Vec::new(),
        tets: Vec::new(),
        face_tags: BTreeMap::new(),
    };
    let mut node_map: BTreeMap<usize, usize> = BTreeMap::new();
    // Surface entity tag -> first physical tag, from $Entities.
    let mut surface_phys: BTreeMap<i64, i64> = BTreeMap::new();

    while let Some((ln, line)) = lines.next() {
        match line {
            "$EndMeshFormat" | "$EndNodes" | "$EndElements" | "$EndEntities" => {}
            "$Entities" => {
                let (ln2, l) = lines.expect("entity counts")?;
                let mut it = tokens(l);
                let np: usize = parse(it.next().unwrap_or(""), ln2, "point count")?;
                let nc: usize = parse(it.next().unwrap_or(""), ln2, "curve count")?;
                let ns: usize = parse(it.next().unwrap_or(""), ln2, "surface count")?;
                let nv: usize = parse(it.next().unwrap_or(""), ln2, "volume count")?;
                for _ in 0..np + nc {
                    lines.expect("entity line")?;
                }
                for _ in 0..ns {
                    let (ln3, l) = lines.expect("surface entity")?;
                    let toks: Vec<&str> = tokens(l).collect();
                    // tag, 6 bbox floats, numPhysicalTags, tags...
                    let tag: i64 = parse(toks.first().copied().unwrap_or(""), ln3, "tag")?;
                    let nphys: usize =
                        parse(toks.get(7).copied().unwrap_or("0"), ln3, "physical count")?;
                    if nphys > 0 {
                        let phys: i64 =
                            parse(toks.get(8).copied().unwrap_or(""), ln3, "physical tag")?;
                        surface_phys.insert(tag, phys);
                    }
                }
                for _ in 0..nv {
                    lines.expect("volume entity")?;
                }
            }
            "$Nodes" => {
                let (ln2, l) = lines.expect("node header")?;
                let mut it = tokens(l);
                let nblocks: usize = parse(it.next().unwrap_or(""), ln2, "block count")?;
                for _ in 0..nblocks {
                    let (ln3, l) = lines.expect("node block header")?;
                    let toks: Vec<&str> = tokens(l).collect();
                    let parametric: u32 =
                        parse(toks.get(2).copied().unwrap_or(""), ln3, "parametric flag")?;
                    if parametric != 0 {
                        return Err(Error::UnsupportedFormat(
                            "parametric nodes are not supported".into(),
                        ));
                    }
                    let nb: usize =
                        parse(toks.get(3).copied().unwrap_or(""), ln3, "block node count")?;
                    let mut tags = Vec::with_capacity(nb);
                    for _ in 0..nb {
                        let (ln4, l) = lines.expect("node tag")?;
                        tags.push(parse::<usize>(l, ln4, "node tag")?);
                    }
                    for tag in tags {
                        let (ln4, l) = lines.expect("node coordinates")?;
                        let mut it = tokens(l);
                        let x: f64 = parse(it.next().unwrap_or(""), ln4, "x")?;
                        let y: f64 = parse(it.next().unwrap_or(""), ln4, "y")?;
                        let z: f64 = parse(it.next().unwrap_or(""), ln4, "z")?;
                        node_map.insert(tag, raw.vertices.len());
                        raw.vertices.push([x, y, z]);
                    }
                }
            }
            "$Elements" => {
                let (ln2, l) = lines.expect("element header")?;
                let mut it = tokens(l);
                let nblocks: usize = parse(it.next().unwrap_or(""), ln2, "block count")?;
                for _ in 0..nblocks {
                    let (ln3, l) = lines.expect("element block header")?;
                    let toks: Vec<&str> = tokens(l).collect();
                    let entity_tag: i64 =
                        parse(toks.get(1).copied().unwrap_or(""), ln3, "entity tag")?;
                    let ty: u32 = parse(toks.get(2).copied().unwrap_or(""), ln3, "element type")?;
                    let nb: usize = parse(
                        toks.get(3).copied().unwrap_or(""),
                        ln3,
                        "block element count",
                    )?;
                    for _ in 0..nb {
                        let (ln4, l) = lines.expect("element line")?;
                        let toks: Vec<&str> = tokens(l).collect();
                        match ty {
                            2 => {
                                let mut f = [0usize; 3];
                                for (i, slot) in f.iter_mut().enumerate() {
                                    let t: usize =
                                        parse(toks.get(i + 1).copied().unwrap_or(""), ln4, "node")?;
                                    *slot = remap(t, &node_map, ln4)?;
                                }
                                f.sort_unstable();
                                let phys =
                                    surface_phys.get(&entity_tag).copied().unwrap_or(entity_tag);
                                raw.face_tags.insert(f, phys);
                            }
                            4 => {
                                let mut tet = [0usize; 4];
                                for (i, slot) in tet.iter_mut().enumerate() {
                                    let t: usize =
                                        parse(toks.get(i + 1).copied().unwrap_or(""), ln4, "node")?;
                                    *slot = remap(t, &node_map, ln4)?;
                                }
                                raw.tets.push(tet);
                            }
                            _ => {}
                        }
                    }
                }
            }
            s if s.starts_with('$') => {
                let end = format!("$End{}", &s[1..]);
                loop {
                    let (_, l) = lines.expect(&end)?;
                    if l == end {
                        break;
                    }
                }
            }
            _ => {
                return Err(Error::MeshParse {
                    line: ln,
                    msg: format!("unexpected content {line:?}"),
                })
            }
        }
    }
    raw.finish()
}

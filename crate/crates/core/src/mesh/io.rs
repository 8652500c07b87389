//! Mesh file formats.
//!
//! * Tet meshes: a `.node`/`.ele` pair. The plain grammar has one vertex per
//!   line (`x y z`) and one element per line (`a b c d`, 0-based). Files in
//!   TetGen layout (count headers, leading point/element index, optional
//!   attributes and markers) are detected from their header and re-based to
//!   0-based indices.
//! * Tri meshes: Wavefront OBJ, `v` and `f` records only (polygons are fan
//!   triangulated, texture/normal indices ignored).
//! * Rod meshes: edge list, vertex lines `x y z` followed by edge lines `a b`
//!   (0-based).
//!
//! Blank lines and `#` comments are ignored everywhere.

use super::{ElementKind, MeshOptions, SimMesh};
use crate::error::MeshError;
use crate::real::Real;
use nalgebra::Vector3;
use std::io::Write;
use std::path::{Path, PathBuf};

type Parsed = (Vec<Vector3<f64>>, Vec<Vec<usize>>);

fn read(path: &Path) -> Result<String, MeshError> {
    std::fs::read_to_string(path).map_err(|source| MeshError::Io {
        path: path.to_owned(),
        source,
    })
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let line = line.split('#').next().unwrap_or("");
        let toks: Vec<&str> = line.split_whitespace().collect();
        (!toks.is_empty()).then_some((i + 1, toks))
    })
}

fn perr(path: &Path, line: usize, message: impl Into<String>) -> MeshError {
    MeshError::Parse {
        path: path.to_owned(),
        line,
        message: message.into(),
    }
}

fn float(path: &Path, line: usize, tok: &str) -> Result<f64, MeshError> {
    tok.parse::<f64>()
        .map_err(|_| perr(path, line, format!("expected a number, found `{tok}`")))
}

fn index(path: &Path, line: usize, tok: &str) -> Result<usize, MeshError> {
    tok.parse::<usize>()
        .map_err(|_| perr(path, line, format!("expected a vertex index, found `{tok}`")))
}

/// Loads a mesh of the given kind. For tets `path` may name the `.node`
/// file, the `.ele` file, or their common stem.
pub fn load_mesh<T: Real>(
    path: &Path,
    kind: ElementKind,
    options: MeshOptions,
) -> Result<SimMesh<T>, MeshError> {
    let (x, elements) = read_mesh_file(path, kind)?;
    let x = x
        .into_iter()
        .map(|p| Vector3::new(T::lit(p.x), T::lit(p.y), T::lit(p.z)))
        .collect();
    SimMesh::new(kind, x, elements, options)
}

/// Reads raw vertices and element index lists in the file format of `kind`
/// without building any geometry.
pub fn read_mesh_file(path: &Path, kind: ElementKind) -> Result<(Vec<Vector3<f64>>, Vec<Vec<usize>>), MeshError> {
    match kind {
        ElementKind::Tet => {
            let stem = match path.extension().and_then(|e| e.to_str()) {
                Some("node") | Some("ele") => path.with_extension(""),
                _ => path.to_owned(),
            };
            let node = with_ext(&stem, "node");
            let ele = with_ext(&stem, "ele");
            parse_tet_pair(&read(&node)?, &node, &read(&ele)?, &ele)
        }
        ElementKind::Tri => parse_obj(&read(path)?, path),
        ElementKind::Rod => parse_edge_list(&read(path)?, path),
    }
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Parses a `.node`/`.ele` pair (plain or TetGen layout).
pub fn parse_tet_pair(
    node_text: &str,
    node_path: &Path,
    ele_text: &str,
    ele_path: &Path,
) -> Result<Parsed, MeshError> {
    let nodes: Vec<_> = data_lines(node_text).collect();
    let eles: Vec<_> = data_lines(ele_text).collect();

    let tetgen_header = |toks: &[&str], dim_pos: usize, dim: usize| {
        toks.iter().all(|t| t.parse::<usize>().is_ok())
            && toks.get(dim_pos).and_then(|t| t.parse::<usize>().ok()) == Some(dim)
    };
    let is_tetgen = nodes
        .first()
        .map(|(_, t)| t.len() == 4 && tetgen_header(t, 1, 3))
        .unwrap_or(false);

    let mut x = Vec::new();
    let mut base = 0usize;
    if is_tetgen {
        let (line, head) = &nodes[0];
        let count = index(node_path, *line, head[0])?;
        if nodes.len() - 1 < count {
            return Err(perr(node_path, *line, format!("header declares {count} points, found {}", nodes.len() - 1)));
        }
        for (k, (line, toks)) in nodes[1..=count].iter().enumerate() {
            if toks.len() < 4 {
                return Err(perr(node_path, *line, "expected `index x y z [attributes] [marker]`"));
            }
            let id = index(node_path, *line, toks[0])?;
            if k == 0 {
                base = id;
            } else if id != base + k {
                return Err(perr(node_path, *line, "point indices must be consecutive"));
            }
            x.push(Vector3::new(
                float(node_path, *line, toks[1])?,
                float(node_path, *line, toks[2])?,
                float(node_path, *line, toks[3])?,
            ));
        }
    } else {
        for (line, toks) in &nodes {
            if toks.len() != 3 {
                return Err(perr(node_path, *line, "expected `x y z`"));
            }
            x.push(Vector3::new(
                float(node_path, *line, toks[0])?,
                float(node_path, *line, toks[1])?,
                float(node_path, *line, toks[2])?,
            ));
        }
    }

    let mut elements = Vec::new();
    if is_tetgen {
        let (line, head) = eles
            .first()
            .ok_or_else(|| perr(ele_path, 0, "missing element header"))?;
        if head.len() < 2 || !tetgen_header(head, 1, 4) {
            return Err(perr(ele_path, *line, "expected TetGen header `<#tets> 4 <#attributes>`"));
        }
        let count = index(ele_path, *line, head[0])?;
        if eles.len() - 1 < count {
            return Err(perr(ele_path, *line, format!("header declares {count} tets, found {}", eles.len() - 1)));
        }
        for (line, toks) in &eles[1..=count] {
            if toks.len() < 5 {
                return Err(perr(ele_path, *line, "expected `index a b c d [attributes]`"));
            }
            let mut el = Vec::with_capacity(4);
            for t in &toks[1..5] {
                let v = index(ele_path, *line, t)?;
                el.push(v.checked_sub(base).ok_or_else(|| perr(ele_path, *line, "vertex index below the point base"))?);
            }
            elements.push(el);
        }
    } else {
        for (line, toks) in &eles {
            if toks.len() != 4 {
                return Err(perr(ele_path, *line, "expected four 0-based vertex indices"));
            }
            elements.push(toks.iter().map(|t| index(ele_path, *line, t)).collect::<Result<_, _>>()?);
        }
    }
    Ok((x, elements))
}

/// Parses `v`/`f` records of a Wavefront OBJ file.
pub fn parse_obj(text: &str, path: &Path) -> Result<Parsed, MeshError> {
    let mut x = Vec::new();
    let mut faces = Vec::new();
    for (line, toks) in data_lines(text) {
        match toks[0] {
            "v" => {
                if toks.len() < 4 {
                    return Err(perr(path, line, "vertex record needs three coordinates"));
                }
                x.push(Vector3::new(
                    float(path, line, toks[1])?,
                    float(path, line, toks[2])?,
                    float(path, line, toks[3])?,
                ));
            }
            "f" => {
                if toks.len() < 4 {
                    return Err(perr(path, line, "face record needs at least three vertices"));
                }
                let mut poly = Vec::with_capacity(toks.len() - 1);
                for t in &toks[1..] {
                    let head = t.split('/').next().unwrap_or("");
                    let raw: i64 = head
                        .parse()
                        .map_err(|_| perr(path, line, format!("bad face index `{t}`")))?;
                    let idx = if raw > 0 {
                        raw as usize - 1
                    } else if raw < 0 && (-raw) as usize <= x.len() {
                        x.len() - (-raw) as usize
                    } else {
                        return Err(perr(path, line, format!("bad face index `{t}`")));
                    };
                    poly.push(idx);
                }
                for k in 1..poly.len() - 1 {
                    faces.push(vec![poly[0], poly[k], poly[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok((x, faces))
}

/// Parses the rod edge-list format.
pub fn parse_edge_list(text: &str, path: &Path) -> Result<Parsed, MeshError> {
    let mut x = Vec::new();
    let mut edges = Vec::new();
    for (line, toks) in data_lines(text) {
        match toks.len() {
            3 => {
                if !edges.is_empty() {
                    return Err(perr(path, line, "vertex line after the first edge line"));
                }
                x.push(Vector3::new(
                    float(path, line, toks[0])?,
                    float(path, line, toks[1])?,
                    float(path, line, toks[2])?,
                ));
            }
            2 => edges.push(vec![index(path, line, toks[0])?, index(path, line, toks[1])?]),
            _ => return Err(perr(path, line, "expected `x y z` or `a b`")),
        }
    }
    Ok((x, edges))
}

/// Writes one OBJ frame: `v` records for `q`, then `f` records for
/// `faces` (tets and shells) or `l` records for rods.
pub fn write_obj_frame<T: Real, W: Write>(
    out: &mut W,
    q: &[T],
    faces: &[[usize; 3]],
    lines: &[[usize; 2]],
) -> std::io::Result<()> {
    for p in q.chunks(3) {
        writeln!(out, "v {:.17e} {:.17e} {:.17e}", p[0].as_f64(), p[1].as_f64(), p[2].as_f64())?;
    }
    for f in faces {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    for l in lines {
        writeln!(out, "l {} {}", l[0] + 1, l[1] + 1)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const REGULAR_NODE: &str = "# regular tet\n1 0 -0.7071067811865476\n-1 0 -0.7071067811865476\n0 1 0.7071067811865476\n0 -1 0.7071067811865476\n";
    const REGULAR_ELE: &str = "0 1 2 3\n";

    #[test]
    fn plain_tet_pair() {
        let (x, e) = parse_tet_pair(REGULAR_NODE, Path::new("a.node"), REGULAR_ELE, Path::new("a.ele")).unwrap();
        assert_eq!(x.len(), 4);
        assert_eq!(e, vec![vec![0, 1, 2, 3]]);
    }

    #[test]
    fn tetgen_layout_is_rebased() {
        let node = "4 3 0 0\n1 0 0 0\n2 1 0 0\n3 0 1 0\n4 0 0 1\n";
        let ele = "1 4 0\n1 1 2 3 4\n";
        let (x, e) = parse_tet_pair(node, Path::new("a.node"), ele, Path::new("a.ele")).unwrap();
        assert_eq!(x.len(), 4);
        assert_eq!(e, vec![vec![0, 1, 2, 3]]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_tet_pair("0 0 0\n1 0 x\n", Path::new("a.node"), "", Path::new("a.ele")).unwrap_err();
        assert!(matches!(err, MeshError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn obj_faces_and_fans() {
        let text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 4//1\n";
        let (x, f) = parse_obj(text, Path::new("q.obj")).unwrap();
        assert_eq!(x.len(), 4);
        assert_eq!(f, vec![vec![0, 1, 2], vec![0, 2, 3]]);
    }

    #[test]
    fn edge_list() {
        let (x, e) = parse_edge_list("0 0 0\n1 0 0\n2 0 0\n0 1\n1 2\n", Path::new("r.txt")).unwrap();
        assert_eq!(x.len(), 3);
        assert_eq!(e, vec![vec![0, 1], vec![1, 2]]);
        assert!(parse_edge_list("0 0 0\n0 1\n1 0 0\n", Path::new("r.txt")).is_err());
    }

    #[test]
    fn load_regular_tet_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("t.node"), REGULAR_NODE).unwrap();
        std::fs::write(dir.path().join("t.ele"), REGULAR_ELE).unwrap();
        let mesh: SimMesh<f64> = load_mesh(&dir.path().join("t.node"), ElementKind::Tet, MeshOptions::default()).unwrap();
        assert_eq!(mesh.num_elements(), 1);
        // Hand computation: edges (-2,0,0), (-1,1,√2), (-1,-1,√2); det = -2·(√2+√2) → |det|/6 = 4√2/6.
        let expected = 4.0 * std::f64::consts::SQRT_2 / 6.0;
        assert!((mesh.volume(0) - expected).abs() < 1e-14);
    }

    #[test]
    fn obj_frame_round_trip() {
        let q = [0.0f64, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let mut buf = Vec::new();
        write_obj_frame(&mut buf, &q, &[[0, 1, 2]], &[]).unwrap();
        let (x, f) = parse_obj(std::str::from_utf8(&buf).unwrap(), Path::new("f.obj")).unwrap();
        assert_eq!(x[1], Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(f, vec![vec![0, 1, 2]]);
    }
}

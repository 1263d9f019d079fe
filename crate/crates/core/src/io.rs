//! Text exports: MEDIT meshes, legacy VTK, CSV tables. Floats are written with
//! 17 significant digits and every artifact starts with the config hash.

use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mesh2d::{DiskSurfaceMesh, Mesh2D, Point};

/// 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Hex SHA-256 of the canonical config bytes.
pub fn config_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// MEDIT

fn medit_body(
    out: &mut String,
    vertices: &[Point],
    vertex_refs: &[u32],
    triangles: &[[usize; 3]],
    edges: &[(usize, usize, u32)],
) {
    out.push_str("MeshVersionFormatted 2\nDimension 2\n\nVertices\n");
    out.push_str(&format!("{}\n", vertices.len()));
    for (v, r) in vertices.iter().zip(vertex_refs) {
        out.push_str(&format!("{} {} {r}\n", fmt_f64(v[0]), fmt_f64(v[1])));
    }
    out.push_str(&format!("\nTriangles\n{}\n", triangles.len()));
    for t in triangles {
        out.push_str(&format!("{} {} {} 0\n", t[0] + 1, t[1] + 1, t[2] + 1));
    }
    out.push_str(&format!("\nEdges\n{}\n", edges.len()));
    for &(a, b, l) in edges {
        out.push_str(&format!("{} {} {l}\n", a + 1, b + 1));
    }
    out.push_str("\nEnd\n");
}

/// Boundary edges are written loop by loop in loop order with their labels.
pub fn write_medit(mesh: &Mesh2D, hash: &str) -> String {
    let mut refs = vec![0u32; mesh.n_vertices()];
    let mut edges = Vec::new();
    for l in &mesh.loops {
        for i in 0..l.len() {
            let (a, b) = l.edge(i);
            refs[a] = 1;
            edges.push((a, b, l.labels[i]));
        }
    }
    let mut out = format!("# config_sha256 {hash}\n");
    medit_body(&mut out, &mesh.vertices, &refs, &mesh.triangles, &edges);
    out
}

pub fn write_medit_screen(mesh: &DiskSurfaceMesh, hash: &str) -> String {
    let refs: Vec<u32> = mesh.on_rim.iter().map(|&r| r as u32).collect();
    // rim edges: triangle edges with both ends on the rim used by one triangle
    let mut count: HashMap<(usize, usize), (usize, usize, usize)> = HashMap::new();
    for t in &mesh.triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            let e = count.entry((a.min(b), a.max(b))).or_insert((a, b, 0));
            e.2 += 1;
        }
    }
    let mut edges: Vec<(usize, usize, u32)> = count
        .values()
        .filter(|&&(a, b, n)| n == 1 && mesh.on_rim[a] && mesh.on_rim[b])
        .map(|&(a, b, _)| (a, b, 1))
        .collect();
    edges.sort_unstable();
    let mut out = format!("# config_sha256 {hash}\n");
    medit_body(&mut out, &mesh.vertices, &refs, &mesh.triangles, &edges);
    out
}

/// Reads a 2D MEDIT mesh; boundary loops are rebuilt by chaining the Edges section.
pub fn read_medit(text: &str) -> Result<Mesh2D> {
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(|l| l.split_whitespace())
        .peekable();
    let bad = |what: &str| Error::Config(format!("MEDIT: {what}"));
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut edges: Vec<(usize, usize, u32)> = Vec::new();
    let num = |t: Option<&str>, what: &str| -> Result<f64> {
        t.ok_or_else(|| bad(&format!("truncated {what}")))?
            .parse::<f64>()
            .map_err(|_| bad(&format!("bad number in {what}")))
    };
    let idx = |t: Option<&str>, what: &str| -> Result<usize> {
        t.ok_or_else(|| bad(&format!("truncated {what}")))?
            .parse::<usize>()
            .map_err(|_| bad(&format!("bad index in {what}")))
    };
    while let Some(tok) = tokens.next() {
        match tok {
            "MeshVersionFormatted" | "Dimension" => {
                let v = idx(tokens.next(), tok)?;
                if tok == "Dimension" && v != 2 {
                    return Err(bad("only Dimension 2 is supported"));
                }
            }
            "Vertices" => {
                let n = idx(tokens.next(), "Vertices")?;
                for _ in 0..n {
                    let x = num(tokens.next(), "Vertices")?;
                    let y = num(tokens.next(), "Vertices")?;
                    num(tokens.next(), "Vertices")?;
                    vertices.push([x, y]);
                }
            }
            "Triangles" => {
                let n = idx(tokens.next(), "Triangles")?;
                for _ in 0..n {
                    let t = [
                        idx(tokens.next(), "Triangles")?,
                        idx(tokens.next(), "Triangles")?,
                        idx(tokens.next(), "Triangles")?,
                    ];
                    idx(tokens.next(), "Triangles")?;
                    if t.iter().any(|&i| i == 0 || i > vertices.len()) {
                        return Err(bad("triangle index out of range"));
                    }
                    triangles.push([t[0] - 1, t[1] - 1, t[2] - 1]);
                }
            }
            "Edges" => {
                let n = idx(tokens.next(), "Edges")?;
                for _ in 0..n {
                    let a = idx(tokens.next(), "Edges")?;
                    let b = idx(tokens.next(), "Edges")?;
                    let l = idx(tokens.next(), "Edges")? as u32;
                    if a == 0 || b == 0 || a > vertices.len() || b > vertices.len() {
                        return Err(bad("edge index out of range"));
                    }
                    edges.push((a - 1, b - 1, l));
                }
            }
            "End" => break,
            other => return Err(bad(&format!("unknown section '{other}'"))),
        }
    }
    let mut next: HashMap<usize, usize> = HashMap::new();
    for (k, &(a, _, _)) in edges.iter().enumerate() {
        if next.insert(a, k).is_some() {
            return Err(bad("boundary vertex starts two edges"));
        }
    }
    let mut used = vec![false; edges.len()];
    let mut loops = Vec::new();
    for start in 0..edges.len() {
        if used[start] {
            continue;
        }
        let (mut verts, mut labels) = (Vec::new(), Vec::new());
        let mut k = start;
        while !used[k] {
            used[k] = true;
            verts.push(edges[k].0);
            labels.push(edges[k].2);
            k = *next
                .get(&edges[k].1)
                .ok_or_else(|| bad("boundary edges do not close into loops"))?;
        }
        if k != start {
            return Err(bad("boundary edges do not close into loops"));
        }
        loops.push((verts, labels));
    }
    Mesh2D::new(vertices, triangles, loops)
}

// ---------------------------------------------------------------------------
// VTK

pub enum PointData {
    Scalars(Vec<f64>),
    Vectors(Vec<[f64; 3]>),
}

/// Legacy ASCII unstructured grid of triangles with point data arrays.
pub fn write_vtk(
    points: &[[f64; 3]],
    triangles: &[[usize; 3]],
    data: &[(&str, PointData)],
    hash: &str,
) -> Result<String> {
    let mut out = format!("# vtk DataFile Version 3.0\nbcopt config_sha256 {hash}\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    out.push_str(&format!("POINTS {} double\n", points.len()));
    for p in points {
        out.push_str(&format!("{} {} {}\n", fmt_f64(p[0]), fmt_f64(p[1]), fmt_f64(p[2])));
    }
    out.push_str(&format!("CELLS {} {}\n", triangles.len(), 4 * triangles.len()));
    for t in triangles {
        out.push_str(&format!("3 {} {} {}\n", t[0], t[1], t[2]));
    }
    out.push_str(&format!("CELL_TYPES {}\n", triangles.len()));
    for _ in triangles {
        out.push_str("5\n");
    }
    if !data.is_empty() {
        out.push_str(&format!("POINT_DATA {}\n", points.len()));
    }
    for (name, d) in data {
        let name = name.replace(char::is_whitespace, "_");
        match d {
            PointData::Scalars(v) => {
                check_len(v.len(), points.len(), &name)?;
                out.push_str(&format!("SCALARS {name} double 1\nLOOKUP_TABLE default\n"));
                for x in v {
                    out.push_str(&fmt_f64(*x));
                    out.push('\n');
                }
            }
            PointData::Vectors(v) => {
                check_len(v.len(), points.len(), &name)?;
                out.push_str(&format!("VECTORS {name} double\n"));
                for x in v {
                    out.push_str(&format!("{} {} {}\n", fmt_f64(x[0]), fmt_f64(x[1]), fmt_f64(x[2])));
                }
            }
        }
    }
    Ok(out)
}

fn check_len(got: usize, want: usize, name: &str) -> Result<()> {
    if got != want {
        return Err(Error::Consistency(format!(
            "point data '{name}' has {got} values for {want} points"
        )));
    }
    Ok(())
}

pub fn mesh_vtk(mesh: &Mesh2D, data: &[(&str, PointData)], hash: &str) -> Result<String> {
    let pts: Vec<[f64; 3]> = mesh.vertices.iter().map(|v| [v[0], v[1], 0.0]).collect();
    write_vtk(&pts, &mesh.triangles, data, hash)
}

pub fn screen_vtk(mesh: &DiskSurfaceMesh, data: &[(&str, PointData)], hash: &str) -> Result<String> {
    let pts: Vec<[f64; 3]> = mesh.vertices.iter().map(|v| [v[0], v[1], 0.0]).collect();
    write_vtk(&pts, &mesh.triangles, data, hash)
}

/// Legacy ASCII POLYDATA: either one closed polyline through all points or one vertex cell per point.
pub fn polydata_vtk(points: &[[f64; 3]], closed_line: bool, data: &[(&str, PointData)], hash: &str) -> Result<String> {
    let n = points.len();
    let mut out = format!("# vtk DataFile Version 3.0\nbcopt config_sha256 {hash}\nASCII\nDATASET POLYDATA\n");
    out.push_str(&format!("POINTS {n} double\n"));
    for p in points {
        out.push_str(&format!("{} {} {}\n", fmt_f64(p[0]), fmt_f64(p[1]), fmt_f64(p[2])));
    }
    if closed_line && n > 0 {
        out.push_str(&format!("LINES 1 {}\n{}", n + 2, n + 1));
        for i in 0..=n {
            out.push_str(&format!(" {}", i % n));
        }
        out.push('\n');
    } else {
        out.push_str(&format!("VERTICES {n} {}\n", 2 * n));
        for i in 0..n {
            out.push_str(&format!("1 {i}\n"));
        }
    }
    if !data.is_empty() {
        out.push_str(&format!("POINT_DATA {n}\n"));
    }
    for (name, d) in data {
        let name = name.replace(char::is_whitespace, "_");
        let PointData::Scalars(v) = d else {
            return Err(Error::Consistency(format!("polydata '{name}' must be scalar")));
        };
        check_len(v.len(), n, &name)?;
        out.push_str(&format!("SCALARS {name} double 1\nLOOKUP_TABLE default\n"));
        for x in v {
            out.push_str(&fmt_f64(*x));
            out.push('\n');
        }
    }
    Ok(out)
}

/// One boundary loop as a closed polyline with point data per loop vertex.
pub fn loop_vtk(mesh: &Mesh2D, loop_id: usize, data: &[(&str, PointData)], hash: &str) -> Result<String> {
    let pts: Vec<[f64; 3]> = mesh.loops[loop_id]
        .verts
        .iter()
        .map(|&v| [mesh.vertices[v][0], mesh.vertices[v][1], 0.0])
        .collect();
    polydata_vtk(&pts, true, data, hash)
}

// ---------------------------------------------------------------------------
// CSV

/// One CSV cell.
pub enum Cell {
    F(f64),
    I(i64),
    S(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(x) => fmt_f64(*x),
            Cell::I(i) => i.to_string(),
            Cell::S(s) => s.clone(),
        }
    }
}

/// Header comment, header row, then the rows (RFC-4180 quoting).
pub fn write_csv(header: &[&str], rows: &[Vec<Cell>], hash: &str) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::Consistency(format!(
                "CSV row has {} cells, header has {}",
                row.len(),
                header.len()
            )));
        }
        w.write_record(row.iter().map(Cell::render)).map_err(csv_err)?;
    }
    let body = w
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(format!(
        "# config_sha256 {hash}\r\n{}",
        String::from_utf8(body).expect("CSV output is UTF-8")
    ))
}

/// (s, value) pairs, e.g. level sets, topological fields, shape gradients.
pub fn arclength_csv(name: &str, s: &[f64], values: &[f64], hash: &str) -> Result<String> {
    check_len(values.len(), s.len(), name)?;
    let rows: Vec<Vec<Cell>> = s
        .iter()
        .zip(values)
        .map(|(&a, &b)| vec![Cell::F(a), Cell::F(b)])
        .collect();
    write_csv(&["s", name], &rows, hash)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh2d::{gen_disk_domain, gen_screen_disk, gen_square_domain};

    #[test]
    fn floats_keep_seventeen_digits() {
        let x = 0.1 + 0.2;
        assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn hash_is_sha256_hex() {
        assert_eq!(
            config_hash(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn medit_round_trip() {
        for mesh in [
            gen_disk_domain(1.0, 40, 0.3).unwrap(),
            gen_square_domain(1.0, 0.25).unwrap(),
        ] {
            let back = read_medit(&write_medit(&mesh, "h")).unwrap();
            assert_eq!(back.vertices, mesh.vertices);
            assert_eq!(back.triangles.len(), mesh.triangles.len());
            assert_eq!(back.loops[0].verts, mesh.loops[0].verts);
            assert_eq!(back.loops[0].labels, mesh.loops[0].labels);
        }
    }

    #[test]
    fn medit_rejects_open_boundary() {
        let text =
            "Dimension 2\nVertices\n3\n0 0 0\n1 0 0\n0 1 0\nTriangles\n1\n1 2 3 0\nEdges\n2\n1 2 0\n2 3 0\nEnd\n";
        assert!(matches!(read_medit(text), Err(Error::Config(_))));
    }

    #[test]
    fn screen_medit_lists_rim_edges() {
        let m = gen_screen_disk(3).unwrap();
        let text = write_medit_screen(&m, "h");
        let n_rim = m.on_rim.iter().filter(|&&r| r).count();
        assert!(text.contains(&format!("Edges\n{n_rim}\n")));
    }

    #[test]
    fn vtk_and_csv_layout() {
        let m = gen_square_domain(1.0, 0.5).unwrap();
        let u: Vec<f64> = (0..m.n_vertices()).map(|i| i as f64).collect();
        let v = mesh_vtk(&m, &[("u", PointData::Scalars(u.clone()))], "abc").unwrap();
        assert!(v.starts_with("# vtk DataFile Version 3.0\nbcopt config_sha256 abc\n"));
        assert!(v.contains(&format!("POINT_DATA {}\nSCALARS u double 1", m.n_vertices())));
        assert!(mesh_vtk(&m, &[("u", PointData::Scalars(vec![0.0]))], "abc").is_err());
        let n = m.loops[0].len();
        let lv = loop_vtk(&m, 0, &[("phi", PointData::Scalars(vec![1.0; n]))], "abc").unwrap();
        assert!(lv.contains(&format!("LINES 1 {}\n{} 0 1", n + 2, n + 1)));
        let pv = polydata_vtk(&[[0.0; 3], [1.0, 0.0, 0.0]], false, &[], "abc").unwrap();
        assert!(pv.contains("VERTICES 2 4\n1 0\n1 1\n"));
        let c = arclength_csv("phi", &[0.0, 0.5], &[-1.0, 2.0], "abc").unwrap();
        assert_eq!(c, "# config_sha256 abc\r\ns,phi\r\n0.0000000000000000e0,-1.0000000000000000e0\r\n5.0000000000000000e-1,2.0000000000000000e0\r\n");
    }
}

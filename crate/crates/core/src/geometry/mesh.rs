//! Triangle meshes: OFF parsing and area-weighted surface sampling.

use std::io::BufRead;

use rand::Rng as _;

use super::{cross, norm, scale, sub, Point, PointCloud};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point>,
    pub faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if let Some(f) = faces
            .iter()
            .find(|f| f.iter().any(|&v| v >= vertices.len()))
        {
            return Err(Error::invalid(format!(
                "face {f:?} references a vertex beyond {}",
                vertices.len()
            )));
        }
        Ok(TriangleMesh { vertices, faces })
    }

    fn corners(&self, f: usize) -> [Point; 3] {
        self.faces[f].map(|v| self.vertices[v])
    }

    pub fn area(&self, f: usize) -> f64 {
        let [a, b, c] = self.corners(f);
        0.5 * norm(cross(sub(b, a), sub(c, a)))
    }

    /// Unit face normal (right-handed winding), or `None` for zero area.
    pub fn face_normal(&self, f: usize) -> Option<Point> {
        let [a, b, c] = self.corners(f);
        let n = cross(sub(b, a), sub(c, a));
        let len = norm(n);
        (len > 0.0).then(|| scale(n, 1.0 / len))
    }
}

/// Reads a text OFF mesh. Polygons with more than three vertices are
/// fan-triangulated; `#` starts a comment.
pub fn read_off(reader: impl BufRead) -> Result<TriangleMesh> {
    let mut tokens: Vec<(usize, String)> = Vec::new();
    for (ln, line) in reader.lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("");
        tokens.extend(body.split_whitespace().map(|t| (ln + 1, t.to_string())));
    }
    let err = |ln: usize, msg: String| Error::Parse {
        location: format!("OFF line {ln}"),
        message: msg,
    };
    match tokens.first_mut() {
        Some((_, h)) if h == "OFF" => {
            tokens.remove(0);
        }
        // ModelNet-style files glue the vertex count to the header: "OFF490 518 0".
        Some((_, h)) if h.starts_with("OFF") => {
            *h = h[3..].to_string();
        }
        Some((ln, h)) => return Err(err(*ln, format!("expected OFF header, got {h:?}"))),
        None => return Err(err(0, "empty file".into())),
    }
    let mut it = tokens.into_iter();
    let mut next_num = |what: &str| -> Result<(usize, f64)> {
        let (ln, t) = it
            .next()
            .ok_or_else(|| err(0, format!("unexpected end of file reading {what}")))?;
        t.parse::<f64>()
            .map(|v| (ln, v))
            .map_err(|_| err(ln, format!("bad {what} {t:?}")))
    };
    let as_count = |(ln, v): (usize, f64), what: &str| -> Result<usize> {
        if v < 0.0 || v.fract() != 0.0 {
            return Err(err(ln, format!("bad {what} {v}")));
        }
        Ok(v as usize)
    };
    let nv = as_count(next_num("vertex count")?, "vertex count")?;
    let nf = as_count(next_num("face count")?, "face count")?;
    let _edges = next_num("edge count")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let x = next_num("coordinate")?.1;
        let y = next_num("coordinate")?.1;
        let z = next_num("coordinate")?.1;
        vertices.push([x, y, z]);
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let arity_tok = next_num("face arity")?;
        let arity = as_count(arity_tok, "face arity")?;
        if arity < 3 {
            return Err(err(arity_tok.0, format!("face with {arity} vertices")));
        }
        let mut ids = Vec::with_capacity(arity);
        for _ in 0..arity {
            let tok = next_num("vertex index")?;
            let id = as_count(tok, "vertex index")?;
            if id >= nv {
                return Err(err(tok.0, format!("vertex index {id} >= {nv}")));
            }
            ids.push(id);
        }
        for w in 1..arity - 1 {
            faces.push([ids[0], ids[w], ids[w + 1]]);
        }
    }
    TriangleMesh::new(vertices, faces)
}

/// A mesh sample plus the normalization that was applied to it.
#[derive(Debug, Clone)]
pub struct MeshSample {
    pub cloud: PointCloud,
    /// Sample centroid subtracted before scaling.
    pub center: Point,
    /// Factor applied after centering; the farthest point lands at radius 1.
    pub scale: f64,
    /// Face each point was drawn from.
    pub faces: Vec<usize>,
}

impl MeshSample {
    pub fn denormalize(&self, p: Point) -> Point {
        let s = scale(p, 1.0 / self.scale);
        [
            s[0] + self.center[0],
            s[1] + self.center[1],
            s[2] + self.center[2],
        ]
    }
}

/// Draws `n` points uniformly over the mesh surface.
pub fn sample_mesh(
    mesh: &TriangleMesh,
    n: usize,
    rng: &mut Rng,
    with_normals: bool,
) -> Result<MeshSample> {
    if n == 0 {
        return Err(Error::invalid("cannot sample zero points"));
    }
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.area(f);
        cumulative.push(total);
    }
    if total.is_nan() || total <= 0.0 {
        return Err(Error::invalid("mesh has zero total area"));
    }
    let mut positions = Vec::with_capacity(n);
    let mut faces = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.gen::<f64>() * total;
        // First face whose cumulative area exceeds u; zero-area faces never qualify.
        let f = cumulative
            .partition_point(|&c| c <= u)
            .min(mesh.faces.len() - 1);
        let [a, b, c] = mesh.corners(f);
        let s = rng.gen::<f64>().sqrt();
        let r2 = rng.gen::<f64>();
        let (wa, wb, wc) = (1.0 - s, s * (1.0 - r2), s * r2);
        positions.push([
            wa * a[0] + wb * b[0] + wc * c[0],
            wa * a[1] + wb * b[1] + wc * c[1],
            wa * a[2] + wb * b[2] + wc * c[2],
        ]);
        faces.push(f);
    }
    let mut center = [0.0; 3];
    for p in &positions {
        for d in 0..3 {
            center[d] += p[d];
        }
    }
    let center = scale(center, 1.0 / n as f64);
    let radius = positions
        .iter()
        .map(|&p| norm(sub(p, center)))
        .fold(0.0, f64::max);
    let factor = if radius > 0.0 { 1.0 / radius } else { 1.0 };
    let normalized = positions
        .iter()
        .map(|&p| scale(sub(p, center), factor))
        .collect();
    let mut cloud = PointCloud::new(normalized)?;
    if with_normals {
        let normals = faces
            .iter()
            .map(|&f| mesh.face_normal(f).unwrap_or([0.0, 0.0, 1.0]))
            .collect();
        cloud = cloud.with_normals(normals)?;
    }
    Ok(MeshSample {
        cloud,
        center,
        scale: factor,
        faces,
    })
}

/// Samples `n` points from `mesh`, normalized to the unit sphere.
pub fn sample_off_mesh(mesh: &TriangleMesh, n: usize, rng: &mut Rng) -> Result<PointCloud> {
    Ok(sample_mesh(mesh, n, rng, true)?.cloud)
}

//! Indexed triangle meshes, ASCII OBJ I/O and the uniform one-ring Laplacian.
//!
//! Topology (faces, unique edges, one-ring adjacency) lives behind an `Arc`
//! so that many garment frames sharing one connectivity stay cheap to clone.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::geometry::Vec3;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: face has {count} vertices, only triangles are supported")]
    NonTriangle { line: usize, count: usize },
    #[error("face {face}: vertex index {index} out of range (vertex count {count})")]
    IndexOutOfRange { face: usize, index: i64, count: usize },
    #[error("face {face} repeats vertex {index}")]
    RepeatedVertex { face: usize, index: usize },
    #[error("vertex count mismatch: expected {expected}, got {got}")]
    VertexCount { expected: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Connectivity shared between meshes with identical faces.
#[derive(Debug)]
pub struct Topology {
    vertex_count: usize,
    faces: Vec<[usize; 3]>,
    edges: Vec<[usize; 2]>,
    neighbors: Vec<Vec<usize>>,
    degenerate_faces: Vec<usize>,
}

impl Topology {
    fn build(vertex_count: usize, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let mut edge_set = BTreeSet::new();
        for (fi, f) in faces.iter().enumerate() {
            for &idx in f {
                if idx >= vertex_count {
                    return Err(MeshError::IndexOutOfRange {
                        face: fi,
                        index: idx as i64,
                        count: vertex_count,
                    });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                let index = if f[0] == f[1] || f[0] == f[2] { f[0] } else { f[1] };
                return Err(MeshError::RepeatedVertex { face: fi, index });
            }
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                edge_set.insert([a.min(b), a.max(b)]);
            }
        }
        let edges: Vec<[usize; 2]> = edge_set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); vertex_count];
        for &[a, b] in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for n in &mut neighbors {
            n.sort_unstable();
        }
        Ok(Self {
            vertex_count,
            faces,
            edges,
            neighbors,
            degenerate_faces: Vec::new(),
        })
    }
}

/// Indexed triangle mesh. Positions are in meters.
#[derive(Debug, Clone)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    topology: Arc<Topology>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let mut topology = Topology::build(vertices.len(), faces)?;
        topology.degenerate_faces = find_degenerate(&vertices, &topology.faces);
        if !topology.degenerate_faces.is_empty() {
            log::warn!(
                "mesh has {} zero-area faces",
                topology.degenerate_faces.len()
            );
        }
        Ok(Self {
            vertices,
            topology: Arc::new(topology),
        })
    }

    pub fn empty() -> Self {
        Self::new(Vec::new(), Vec::new()).expect("empty mesh is valid")
    }

    /// Same connectivity, new positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self, MeshError> {
        if vertices.len() != self.topology.vertex_count {
            return Err(MeshError::VertexCount {
                expected: self.topology.vertex_count,
                got: vertices.len(),
            });
        }
        let mut topology = Arc::clone(&self.topology);
        let degenerate = find_degenerate(&vertices, &topology.faces);
        if degenerate != topology.degenerate_faces {
            topology = Arc::new(Topology {
                vertex_count: topology.vertex_count,
                faces: topology.faces.clone(),
                edges: topology.edges.clone(),
                neighbors: topology.neighbors.clone(),
                degenerate_faces: degenerate,
            });
        }
        Ok(Self { vertices, topology })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.topology.faces
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.topology.edges
    }

    /// Sorted one-ring neighbors of vertex `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.topology.neighbors[i]
    }

    pub fn degenerate_faces(&self) -> &[usize] {
        &self.topology.degenerate_faces
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.topology.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty() && self.topology.faces.is_empty()
    }

    pub fn shares_topology(&self, other: &TriMesh) -> bool {
        Arc::ptr_eq(&self.topology, &other.topology)
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.topology.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Vertices with no incident edge.
    pub fn isolated_vertices(&self) -> Vec<usize> {
        (0..self.vertex_count())
            .filter(|&i| self.topology.neighbors[i].is_empty())
            .collect()
    }

    /// Closed, consistently oriented two-manifold: every directed edge appears
    /// exactly once and its reverse exactly once.
    pub fn is_watertight(&self) -> bool {
        if self.face_count() == 0 {
            return false;
        }
        let mut directed = BTreeSet::new();
        for f in self.faces() {
            for k in 0..3 {
                if !directed.insert((f[k], f[(k + 1) % 3])) {
                    return false;
                }
            }
        }
        directed.iter().all(|&(a, b)| directed.contains(&(b, a)))
    }

    pub fn bounding_box(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| {
            (lo.inf(v), hi.sup(v))
        }))
    }
}

fn find_degenerate(vertices: &[Vec3], faces: &[[usize; 3]]) -> Vec<usize> {
    faces
        .iter()
        .enumerate()
        .filter(|(_, f)| {
            let e1 = vertices[f[1]] - vertices[f[0]];
            let e2 = vertices[f[2]] - vertices[f[0]];
            e1.cross(&e2).norm_squared() == 0.0
        })
        .map(|(i, _)| i)
        .collect()
}

/// Parses ASCII OBJ text. Only `v` and `f` records are interpreted; `f`
/// entries of the form `i/t/n` use the position index.
pub fn parse_obj(text: &str) -> Result<TriMesh, MeshError> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = content.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let coords: Vec<f64> = tokens
                    .map(|t| {
                        t.parse::<f64>().map_err(|e| MeshError::Parse {
                            line,
                            message: format!("bad coordinate {t:?}: {e}"),
                        })
                    })
                    .collect::<Result<_, _>>()?;
                if coords.len() < 3 {
                    return Err(MeshError::Parse {
                        line,
                        message: format!("vertex needs 3 coordinates, got {}", coords.len()),
                    });
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let idx: Vec<i64> = tokens
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        head.parse::<i64>().map_err(|e| MeshError::Parse {
                            line,
                            message: format!("bad face index {t:?}: {e}"),
                        })
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() != 3 {
                    return Err(MeshError::NonTriangle {
                        line,
                        count: idx.len(),
                    });
                }
                faces.push([idx[0], idx[1], idx[2]]);
            }
            _ => {}
        }
    }
    let count = vertices.len();
    let faces = faces
        .into_iter()
        .enumerate()
        .map(|(fi, f)| {
            let mut out = [0usize; 3];
            for k in 0..3 {
                if f[k] < 1 || f[k] as usize > count {
                    return Err(MeshError::IndexOutOfRange {
                        face: fi,
                        index: f[k],
                        count,
                    });
                }
                out[k] = f[k] as usize - 1;
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>, _>>()?;
    TriMesh::new(vertices, faces)
}

pub fn load_obj(path: impl AsRef<Path>) -> Result<TriMesh, MeshError> {
    parse_obj(&fs::read_to_string(path)?)
}

/// OBJ text with 17 significant digits per coordinate, which round-trips
/// every `f64` exactly.
pub fn format_obj(mesh: &TriMesh) -> String {
    let mut out = String::with_capacity(mesh.vertex_count() * 72 + mesh.face_count() * 24);
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {:.16e} {:.16e} {:.16e}", v.x, v.y, v.z);
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

pub fn save_obj(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<(), MeshError> {
    fs::write(path, format_obj(mesh))?;
    Ok(())
}

/// Mean over the one-ring of `values[j] - values[i]`. Isolated vertices get
/// the zero vector; see [`TriMesh::isolated_vertices`].
pub fn uniform_laplacian(mesh: &TriMesh, values: &[Vec3]) -> Vec<Vec3> {
    assert_eq!(values.len(), mesh.vertex_count(), "field length must match vertex count");
    laplacian_from_adjacency(&mesh.topology.neighbors, values)
}

/// Uniform Laplacian over an explicit adjacency list.
pub fn laplacian_from_adjacency<R: AsRef<[usize]>>(neighbors: &[R], values: &[Vec3]) -> Vec<Vec3> {
    neighbors
        .iter()
        .enumerate()
        .map(|(i, ring)| {
            let ring = ring.as_ref();
            if ring.is_empty() {
                return Vec3::zeros();
            }
            let sum = ring
                .iter()
                .fold(Vec3::zeros(), |acc, &j| acc + (values[j] - values[i]));
            sum / ring.len() as f64
        })
        .collect()
}

/// Applies the transpose of the uniform Laplacian operator.
pub fn uniform_laplacian_transpose(mesh: &TriMesh, values: &[Vec3]) -> Vec<Vec3> {
    assert_eq!(values.len(), mesh.vertex_count());
    let mut out = vec![Vec3::zeros(); values.len()];
    for i in 0..mesh.vertex_count() {
        let ring = mesh.neighbors(i);
        if ring.is_empty() {
            continue;
        }
        let w = values[i] / ring.len() as f64;
        out[i] -= values[i];
        for &j in ring {
            out[j] += w;
        }
    }
    out
}

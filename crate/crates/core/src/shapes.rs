//! Procedural closed meshes: cubes, icospheres, star-shaped blobs, prisms.
//! All outputs are watertight with outward (counter-clockwise) winding.

use std::collections::HashMap;

use crate::geometry::Vec3;
use crate::mesh::TriMesh;

/// Axis-aligned cube with edge length `size` centered at the origin.
pub fn cube(size: f64) -> TriMesh {
    let h = size / 2.0;
    let v = |x: f64, y: f64, z: f64| Vec3::new(x * h, y * h, z * h);
    let vertices = vec![
        v(-1.0, -1.0, -1.0),
        v(1.0, -1.0, -1.0),
        v(1.0, 1.0, -1.0),
        v(-1.0, 1.0, -1.0),
        v(-1.0, -1.0, 1.0),
        v(1.0, -1.0, 1.0),
        v(1.0, 1.0, 1.0),
        v(-1.0, 1.0, 1.0),
    ];
    let faces = vec![
        [0, 2, 1],
        [0, 3, 2],
        [4, 5, 6],
        [4, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [2, 3, 7],
        [2, 7, 6],
        [1, 2, 6],
        [1, 6, 5],
        [0, 4, 7],
        [0, 7, 3],
    ];
    TriMesh::new(vertices, faces).expect("cube is valid")
}

/// Icosphere of the given radius; `subdivisions` = 0 is the icosahedron
/// (20 faces), each level multiplies the face count by four.
pub fn icosphere(radius: f64, subdivisions: usize) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let vertices = vertices.into_iter().map(|v| v * radius).collect();
    TriMesh::new(vertices, faces).expect("icosphere is valid")
}

/// Star-shaped closed mesh: icosphere vertices pushed along their direction
/// by `radius(direction)`. Watertight whenever `radius` is positive.
pub fn radial_mesh(subdivisions: usize, radius: impl Fn(&Vec3) -> f64) -> TriMesh {
    let base = icosphere(1.0, subdivisions);
    let vertices = base.vertices().iter().map(|d| d * radius(d)).collect();
    base.with_vertices(vertices).expect("same vertex count")
}

/// Triangular prism along z spanning `[-half_length, half_length]`. The cross
/// section has its base on `y = 0` from `x = -half_width` to `half_width`
/// and its apex at `(0, height)`: a wedge whose ridge is the z-parallel
/// edge through the apex.
pub fn wedge_prism(half_width: f64, height: f64, half_length: f64) -> TriMesh {
    let mut vertices = Vec::new();
    for &z in &[-half_length, half_length] {
        vertices.push(Vec3::new(-half_width, 0.0, z));
        vertices.push(Vec3::new(half_width, 0.0, z));
        vertices.push(Vec3::new(0.0, height, z));
    }
    // 0,1,2 at the back cap, 3,4,5 at the front cap.
    let faces = vec![
        [0, 2, 1],
        [3, 4, 5],
        [0, 1, 4],
        [0, 4, 3],
        [1, 2, 5],
        [1, 5, 4],
        [2, 0, 3],
        [2, 3, 5],
    ];
    TriMesh::new(vertices, faces).expect("prism is valid")
}

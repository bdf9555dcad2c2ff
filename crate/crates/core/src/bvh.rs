//! Axis-aligned bounding volume hierarchy over the faces of a triangle mesh.
//!
//! Built top-down: each node's faces are ordered by centroid along the longest
//! axis of the centroid bounds (ties by face index) and split at the median.
//! The result depends only on the mesh, never on thread scheduling.

use crate::geometry::{closest_point_on_triangle, Aabb, TriangleFeature, Vec3};
use crate::mesh::TriMesh;

pub const DEFAULT_LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy)]
pub enum NodeKind {
    Leaf { start: usize, count: usize },
    Inner { left: usize, right: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct Node {
    pub bounds: Aabb,
    pub kind: NodeKind,
}

#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    /// Face indices in leaf order.
    order: Vec<usize>,
    face_bounds: Vec<Aabb>,
    leaf_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestPoint {
    pub point: Vec3,
    pub face: usize,
    pub barycentric: [f64; 3],
    pub feature: TriangleFeature,
    pub distance: f64,
}

#[derive(Debug, thiserror::Error)]
#[error("cannot build a BVH over a mesh without faces")]
pub struct EmptyMeshError;

impl Bvh {
    pub fn build(mesh: &TriMesh) -> Result<Self, EmptyMeshError> {
        Self::with_leaf_size(mesh, DEFAULT_LEAF_SIZE)
    }

    pub fn with_leaf_size(mesh: &TriMesh, leaf_size: usize) -> Result<Self, EmptyMeshError> {
        if mesh.face_count() == 0 {
            return Err(EmptyMeshError);
        }
        let leaf_size = leaf_size.max(1);
        let face_bounds: Vec<Aabb> = (0..mesh.face_count())
            .map(|f| Aabb::from_triangle(&mesh.triangle(f)))
            .collect();
        let centroids: Vec<Vec3> = face_bounds.iter().map(|b| (b.min + b.max) * 0.5).collect();
        let mut order: Vec<usize> = (0..mesh.face_count()).collect();
        let mut nodes = Vec::with_capacity(2 * mesh.face_count() / leaf_size + 1);
        build_node(&mut nodes, &mut order, 0, &face_bounds, &centroids, leaf_size);
        Ok(Self {
            nodes,
            order,
            face_bounds,
            leaf_size,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    pub fn face_bounds(&self, face: usize) -> &Aabb {
        &self.face_bounds[face]
    }

    pub fn leaf_faces(&self, start: usize, count: usize) -> &[usize] {
        &self.order[start..start + count]
    }

    /// Globally closest point on the mesh. Exact distance ties go to the
    /// lowest face index.
    pub fn closest_point(&self, mesh: &TriMesh, q: &Vec3) -> ClosestPoint {
        let mut best_d2 = f64::INFINITY;
        let mut best: Option<(usize, crate::geometry::TriangleProjection)> = None;
        let mut stack: Vec<(usize, f64)> = Vec::with_capacity(64);
        stack.push((0, self.nodes[0].bounds.distance_squared(q)));
        while let Some((ni, node_d2)) = stack.pop() {
            if node_d2 > best_d2 {
                continue;
            }
            match self.nodes[ni].kind {
                NodeKind::Leaf { start, count } => {
                    for &f in &self.order[start..start + count] {
                        if self.face_bounds[f].distance_squared(q) > best_d2 {
                            continue;
                        }
                        let [a, b, c] = mesh.triangle(f);
                        let proj = closest_point_on_triangle(q, &a, &b, &c);
                        let better = match best {
                            None => true,
                            Some((bf, _)) => {
                                proj.distance_squared < best_d2
                                    || (proj.distance_squared == best_d2 && f < bf)
                            }
                        };
                        if better {
                            best_d2 = proj.distance_squared;
                            best = Some((f, proj));
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    let dl = self.nodes[left].bounds.distance_squared(q);
                    let dr = self.nodes[right].bounds.distance_squared(q);
                    // Push the farther child first so the nearer one is popped next.
                    if dl <= dr {
                        stack.push((right, dr));
                        stack.push((left, dl));
                    } else {
                        stack.push((left, dl));
                        stack.push((right, dr));
                    }
                }
            }
        }
        let (face, proj) = best.expect("non-empty BVH always yields a face");
        ClosestPoint {
            point: proj.point,
            face,
            barycentric: proj.barycentric,
            feature: proj.feature,
            distance: proj.distance_squared.sqrt(),
        }
    }

    /// All face pairs `(self_face, other_face)` whose boxes overlap after
    /// padding by `pad`, sorted.
    pub fn overlapping_pairs(&self, other: &Bvh, pad: f64) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, 0usize)];
        while let Some((a, b)) = stack.pop() {
            let na = &self.nodes[a];
            let nb = &other.nodes[b];
            if !na.bounds.overlaps(&nb.bounds, pad) {
                continue;
            }
            match (na.kind, nb.kind) {
                (NodeKind::Leaf { start: sa, count: ca }, NodeKind::Leaf { start: sb, count: cb }) => {
                    for &fa in &self.order[sa..sa + ca] {
                        for &fb in &other.order[sb..sb + cb] {
                            if self.face_bounds[fa].overlaps(&other.face_bounds[fb], pad) {
                                out.push((fa, fb));
                            }
                        }
                    }
                }
                (NodeKind::Leaf { .. }, NodeKind::Inner { left, right }) => {
                    stack.push((a, left));
                    stack.push((a, right));
                }
                (NodeKind::Inner { left, right }, NodeKind::Leaf { .. }) => {
                    stack.push((left, b));
                    stack.push((right, b));
                }
                (NodeKind::Inner { left: la, right: ra }, NodeKind::Inner { left: lb, right: rb }) => {
                    // Descend the larger box.
                    let va = na.bounds.extent().norm_squared();
                    let vb = nb.bounds.extent().norm_squared();
                    if va >= vb {
                        stack.push((la, b));
                        stack.push((ra, b));
                    } else {
                        stack.push((a, lb));
                        stack.push((a, rb));
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

fn build_node(
    nodes: &mut Vec<Node>,
    order: &mut [usize],
    offset: usize,
    face_bounds: &[Aabb],
    centroids: &[Vec3],
    leaf_size: usize,
) -> usize {
    let bounds = order
        .iter()
        .fold(Aabb::empty(), |acc, &f| acc.union(&face_bounds[f]));
    let index = nodes.len();
    nodes.push(Node {
        bounds,
        kind: NodeKind::Leaf {
            start: offset,
            count: order.len(),
        },
    });
    if order.len() <= leaf_size {
        return index;
    }
    let mut cbounds = Aabb::empty();
    for &f in order.iter() {
        cbounds.grow_point(&centroids[f]);
    }
    let axis = cbounds.longest_axis();
    order.sort_unstable_by(|&a, &b| {
        centroids[a][axis]
            .total_cmp(&centroids[b][axis])
            .then(a.cmp(&b))
    });
    let mid = order.len() / 2;
    let (lo, hi) = order.split_at_mut(mid);
    let left = build_node(nodes, lo, offset, face_bounds, centroids, leaf_size);
    let right = build_node(nodes, hi, offset + mid, face_bounds, centroids, leaf_size);
    nodes[index].kind = NodeKind::Inner { left, right };
    index
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_triangle_is_one_leaf() {
        let m = TriMesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let bvh = Bvh::build(&m).unwrap();
        assert_eq!(bvh.nodes().len(), 1);
        assert!(matches!(bvh.root().kind, NodeKind::Leaf { start: 0, count: 1 }));
    }

    #[test]
    fn empty_mesh_is_an_error() {
        assert!(Bvh::build(&TriMesh::empty()).is_err());
    }

    #[test]
    fn degenerate_face_box_is_a_segment() {
        let m = TriMesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let bvh = Bvh::build(&m).unwrap();
        let b = bvh.face_bounds(0);
        assert_eq!(b.extent(), Vec3::new(2.0, 0.0, 0.0));
        let cp = bvh.closest_point(&m, &Vec3::new(1.5, 1.0, 0.0));
        assert!((cp.distance - 1.0).abs() < 1e-12);
    }
}

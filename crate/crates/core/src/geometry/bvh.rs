use nalgebra::Point3;

use super::triangle::{intersect_triangle, ShearedRay};
use super::{Aabb, Ray};

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    /// Leaf: first index into `order`. Interior: index of the right child
    /// (the left child is always the next node).
    offset: u32,
    /// Number of triangles for a leaf, 0 for an interior node.
    count: u32,
}

/// Bounding volume hierarchy over a triangle list, reporting every crossing
/// along a ray (not just the nearest).
#[derive(Debug, Clone)]
pub struct TriangleBvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
}

impl TriangleBvh {
    pub fn build(vertices: &[Point3<f64>], triangles: &[[u32; 3]]) -> Self {
        let boxes: Vec<Aabb> =
            triangles.iter().map(|t| Aabb::from_points(t.iter().map(|&i| &vertices[i as usize]))).collect();
        let centroids: Vec<Point3<f64>> = boxes.iter().map(Aabb::center).collect();
        let mut order: Vec<u32> = (0..triangles.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * triangles.len() / LEAF_SIZE + 1);
        if !triangles.is_empty() {
            build_node(&boxes, &centroids, &mut order, 0, triangles.len(), &mut nodes);
        }
        Self { nodes, order }
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes.first().map(|n| n.bounds).unwrap_or_else(Aabb::empty)
    }

    /// Append the parameter of every crossing with `t > 0` to `out`.
    pub fn crossings(&self, vertices: &[Point3<f64>], triangles: &[[u32; 3]], ray: &Ray, out: &mut Vec<f64>) {
        if self.nodes.is_empty() {
            return;
        }
        let sheared = ShearedRay::new(ray);
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i];
            if node.bounds.ray_interval(ray).is_none() {
                continue;
            }
            if node.count > 0 {
                let start = node.offset as usize;
                for &ti in &self.order[start..start + node.count as usize] {
                    let [a, b, c] = triangles[ti as usize];
                    if let Some(t) = intersect_triangle(
                        &sheared,
                        &vertices[a as usize],
                        &vertices[b as usize],
                        &vertices[c as usize],
                    ) {
                        out.push(t);
                    }
                }
            } else {
                stack.push(node.offset as usize);
                stack.push(i + 1);
            }
        }
    }
}

fn build_node(
    boxes: &[Aabb],
    centroids: &[Point3<f64>],
    order: &mut [u32],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let mut bounds = Aabb::empty();
    for &ti in &order[start..end] {
        bounds = bounds.union(&boxes[ti as usize]);
    }
    // Conservative padding so grazing rays are never culled by rounding.
    let pad = 1e-9 * (1.0 + bounds.extent().amax());
    let bounds = bounds.padded(pad);
    let index = nodes.len();
    nodes.push(Node { bounds, offset: start as u32, count: (end - start) as u32 });
    if end - start <= LEAF_SIZE {
        return index;
    }

    let mut cbox = Aabb::empty();
    for &ti in &order[start..end] {
        cbox.grow(&centroids[ti as usize]);
    }
    let ext = cbox.extent();
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    if ext[axis] <= 0.0 {
        return index;
    }
    let mid = (start + end) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        centroids[a as usize][axis].total_cmp(&centroids[b as usize][axis]).then(a.cmp(&b))
    });
    build_node(boxes, centroids, order, start, mid, nodes);
    let right = build_node(boxes, centroids, order, mid, end, nodes);
    nodes[index].offset = right as u32;
    nodes[index].count = 0;
    index
}

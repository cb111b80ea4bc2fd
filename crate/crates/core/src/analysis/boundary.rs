//! Closed boundaries of Mahalanobis balls: vertex loops in 2D, icospheres in
//! 3D. Connectivity is fixed at construction and survives transport, so
//! containment can be re-evaluated after the vertices move.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{ensure_finite, Error, Result};

/// Points within this distance of the boundary count as inside.
pub const BOUNDARY_TOLERANCE: f64 = 1e-12;

/// Fixed ray direction for 3D parity tests; irrational components keep it
/// off lattice-aligned edges and vertices.
const RAY: [f64; 3] = [0.618_033_988_749_894_8, 0.577_215_664_901_532_9, 0.381_966_011_250_105_1];

#[derive(Debug, Clone, PartialEq)]
pub enum Topology {
    /// Vertices in order around a closed loop.
    Loop,
    /// Outward-oriented triangles over the vertex list.
    Triangles(Vec<[usize; 3]>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySet {
    vertices: Array2<f64>,
    topology: Topology,
    mahal_radius: f64,
    cov_diag: Vec<f64>,
    subdivision_level: Option<usize>,
}

/// Boundary of `{x : sum x_j^2 / cov_j <= radius^2}` with about `n_target` vertices.
pub fn make_ball_boundary(d: usize, radius: f64, cov_diag: &[f64], n_target: usize) -> Result<BoundarySet> {
    if cov_diag.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: cov_diag.len() });
    }
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {radius}")));
    }
    if cov_diag.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
        return Err(Error::InvalidArgument("covariance diagonal must be positive".into()));
    }
    let scale: Vec<f64> = cov_diag.iter().map(|c| radius * c.sqrt()).collect();
    let (vertices, topology, level) = match d {
        2 => {
            if n_target < 3 {
                return Err(Error::InvalidArgument("a loop needs at least 3 vertices".into()));
            }
            let v = Array2::from_shape_fn((n_target, 2), |(k, j)| {
                let theta = 2.0 * PI * k as f64 / n_target as f64;
                scale[j] * if j == 0 { theta.cos() } else { theta.sin() }
            });
            (v, Topology::Loop, None)
        }
        3 => {
            let level = (0..8usize)
                .min_by_key(|&k| (10 * 4usize.pow(k as u32) + 2).abs_diff(n_target))
                .expect("non-empty range");
            let (unit, faces) = icosphere(level);
            let v = Array2::from_shape_fn(unit.dim(), |(i, j)| scale[j] * unit[[i, j]]);
            (v, Topology::Triangles(faces), Some(level))
        }
        _ => return Err(Error::InvalidArgument(format!("boundaries exist for d = 2 or 3, got {d}"))),
    };
    let set =
        BoundarySet { vertices, topology, mahal_radius: radius, cov_diag: cov_diag.to_vec(), subdivision_level: level };
    set.validate()?;
    Ok(set)
}

/// Unit icosphere after `level` midpoint subdivisions of an icosahedron.
fn icosphere(level: usize) -> (Array2<f64>, Vec<[usize; 3]>) {
    let p = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let mut verts: Vec<[f64; 3]> = vec![
        [-1.0, p, 0.0],
        [1.0, p, 0.0],
        [-1.0, -p, 0.0],
        [1.0, -p, 0.0],
        [0.0, -1.0, p],
        [0.0, 1.0, p],
        [0.0, -1.0, -p],
        [0.0, 1.0, -p],
        [p, 0.0, -1.0],
        [p, 0.0, 1.0],
        [-p, 0.0, -1.0],
        [-p, 0.0, 1.0],
    ];
    let normalize = |v: [f64; 3]| {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        [v[0] / n, v[1] / n, v[2] / n]
    };
    for v in &mut verts {
        *v = normalize(*v);
    }
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
    for _ in 0..level {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<[f64; 3]>| {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                let (u, w) = (verts[a], verts[b]);
                verts.push(normalize([(u[0] + w[0]) / 2.0, (u[1] + w[1]) / 2.0, (u[2] + w[2]) / 2.0]));
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let flat: Vec<f64> = verts.iter().flatten().copied().collect();
    (Array2::from_shape_vec((verts.len(), 3), flat).expect("3 columns"), faces)
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn segments_cross(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    (d1 > 0.0) != (d2 > 0.0) && (d3 > 0.0) != (d4 > 0.0) && d1 != 0.0 && d2 != 0.0 && d3 != 0.0 && d4 != 0.0
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let s = if len2 == 0.0 { 0.0 } else { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) };
    let (cx, cy) = (a[0] + s * dx - p[0], a[1] + s * dy - p[1]);
    (cx * cx + cy * cy).sqrt()
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

enum RayHit {
    Miss,
    Crossing,
    OnSurface,
}

/// Moller-Trumbore intersection of the fixed ray from `origin` with a triangle.
fn ray_triangle(origin: [f64; 3], a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> RayHit {
    let e1 = sub(b, a);
    let e2 = sub(c, a);
    let pv = cross(RAY, e2);
    let det = dot(e1, pv);
    if det.abs() < 1e-300 {
        return RayHit::Miss;
    }
    let inv = 1.0 / det;
    let tv = sub(origin, a);
    let u = dot(tv, pv) * inv;
    if !(0.0..=1.0).contains(&u) {
        return RayHit::Miss;
    }
    let qv = cross(tv, e1);
    let v = dot(RAY, qv) * inv;
    if v < 0.0 || u + v > 1.0 {
        return RayHit::Miss;
    }
    let t = dot(e2, qv) * inv;
    if t.abs() <= BOUNDARY_TOLERANCE {
        RayHit::OnSurface
    } else if t > 0.0 {
        RayHit::Crossing
    } else {
        RayHit::Miss
    }
}

impl BoundarySet {
    pub fn dim(&self) -> usize {
        self.vertices.ncols()
    }

    pub fn vertices(&self) -> ArrayView2<'_, f64> {
        self.vertices.view()
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn mahal_radius(&self) -> f64 {
        self.mahal_radius
    }

    pub fn cov_diag(&self) -> &[f64] {
        &self.cov_diag
    }

    pub fn subdivision_level(&self) -> Option<usize> {
        self.subdivision_level
    }

    pub fn len(&self) -> usize {
        self.vertices.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.nrows() == 0
    }

    /// Same connectivity over moved vertices. The result is not validated;
    /// call [`BoundarySet::validate`] to check that transport kept it well formed.
    pub fn with_vertices(&self, vertices: Array2<f64>) -> Result<Self> {
        if vertices.dim() != self.vertices.dim() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: vertices.nrows() });
        }
        ensure_finite(vertices.iter(), || "transported boundary".into())?;
        Ok(Self { vertices, ..self.clone() })
    }

    fn vertex2(&self, i: usize) -> [f64; 2] {
        [self.vertices[[i, 0]], self.vertices[[i, 1]]]
    }

    fn vertex3(&self, i: usize) -> [f64; 3] {
        [self.vertices[[i, 0]], self.vertices[[i, 1]], self.vertices[[i, 2]]]
    }

    /// 2D: the loop is simple. 3D: every edge borders exactly two
    /// consistently oriented triangles and no triangle is degenerate.
    pub fn validate(&self) -> Result<()> {
        ensure_finite(self.vertices.iter(), || "boundary vertices".into())?;
        match &self.topology {
            Topology::Loop => {
                let n = self.len();
                if n < 3 {
                    return Err(Error::Degenerate("loop has fewer than 3 vertices".into()));
                }
                for i in 0..n {
                    let (a, b) = (self.vertex2(i), self.vertex2((i + 1) % n));
                    if a == b {
                        return Err(Error::Degenerate(format!("loop edge {i} has zero length")));
                    }
                    for j in (i + 2)..n {
                        if i == 0 && j == n - 1 {
                            continue;
                        }
                        let (c, d) = (self.vertex2(j), self.vertex2((j + 1) % n));
                        if segments_cross(a, b, c, d) {
                            return Err(Error::Degenerate(format!("loop edges {i} and {j} intersect")));
                        }
                    }
                }
                Ok(())
            }
            Topology::Triangles(faces) => {
                let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
                for (f, tri) in faces.iter().enumerate() {
                    if tri.iter().any(|&v| v >= self.len()) {
                        return Err(Error::Degenerate(format!("triangle {f} references a missing vertex")));
                    }
                    let [a, b, c] = tri.map(|v| self.vertex3(v));
                    let n = cross(sub(b, a), sub(c, a));
                    if dot(n, n) == 0.0 {
                        return Err(Error::Degenerate(format!("triangle {f} has zero area")));
                    }
                    for k in 0..3 {
                        *directed.entry((tri[k], tri[(k + 1) % 3])).or_default() += 1;
                    }
                }
                for (&(a, b), &count) in &directed {
                    if count != 1 || directed.get(&(b, a)) != Some(&1) {
                        return Err(Error::Degenerate(format!(
                            "edge ({a}, {b}) is not shared by exactly two triangles"
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    /// Even-odd containment; points on the boundary count as inside.
    pub fn contains(&self, p: ArrayView1<f64>) -> bool {
        match &self.topology {
            Topology::Loop => {
                let q = [p[0], p[1]];
                let n = self.len();
                let mut inside = false;
                for i in 0..n {
                    let (a, b) = (self.vertex2(i), self.vertex2((i + 1) % n));
                    if point_segment_distance(q, a, b) <= BOUNDARY_TOLERANCE {
                        return true;
                    }
                    if (a[1] > q[1]) != (b[1] > q[1]) {
                        let x_cross = a[0] + (q[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                        if q[0] < x_cross {
                            inside = !inside;
                        }
                    }
                }
                inside
            }
            Topology::Triangles(faces) => {
                let o = [p[0], p[1], p[2]];
                let mut inside = false;
                for tri in faces {
                    match ray_triangle(o, self.vertex3(tri[0]), self.vertex3(tri[1]), self.vertex3(tri[2])) {
                        RayHit::OnSurface => return true,
                        RayHit::Crossing => inside = !inside,
                        RayHit::Miss => {}
                    }
                }
                inside
            }
        }
    }

    /// 2D loops as CSV (`x0,x1`, one vertex per row, in loop order).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        crate::datasets::PointCloud::new("boundary", self.vertices.clone())?.write_csv(writer)
    }

    /// 3D meshes as OFF text.
    pub fn write_off<W: Write>(&self, mut writer: W) -> Result<()> {
        let Topology::Triangles(faces) = &self.topology else {
            return Err(Error::InvalidArgument("OFF export needs a triangulated boundary".into()));
        };
        writeln!(writer, "OFF")?;
        writeln!(writer, "{} {} 0", self.len(), faces.len())?;
        for row in self.vertices.rows() {
            writeln!(writer, "{:?} {:?} {:?}", row[0], row[1], row[2])?;
        }
        for [a, b, c] in faces {
            writeln!(writer, "3 {a} {b} {c}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn unit_circle_vertices() {
        let b = make_ball_boundary(2, 1.0, &[1.0, 1.0], 200).unwrap();
        assert_eq!(b.len(), 200);
        for row in b.vertices().rows() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn anisotropic_scaling() {
        let b = make_ball_boundary(2, 1.0, &[1.0, 1e-2], 4).unwrap();
        assert!((b.vertices()[[1, 1]] - 0.1).abs() < 1e-15);
        assert!(b.vertices()[[1, 0]].abs() < 1e-15);
    }

    #[test]
    fn icosphere_counts() {
        let b = make_ball_boundary(3, 2.0, &[1.0, 1.0, 1.0], 200).unwrap();
        assert_eq!(b.subdivision_level(), Some(2));
        assert_eq!(b.len(), 162);
        let Topology::Triangles(faces) = b.topology() else { panic!("expected triangles") };
        assert_eq!(faces.len(), 320);
        let b = make_ball_boundary(3, 1.0, &[1.0, 1.0, 1.0], 12).unwrap();
        assert_eq!((b.len(), b.subdivision_level()), (12, Some(0)));
    }

    #[test]
    fn invalid_arguments() {
        assert!(make_ball_boundary(4, 1.0, &[1.0; 4], 100).is_err());
        assert!(make_ball_boundary(2, 0.0, &[1.0; 2], 100).is_err());
        assert!(make_ball_boundary(2, 1.0, &[1.0, 0.0], 100).is_err());
    }

    #[test]
    fn square_containment() {
        let sq = BoundarySet {
            vertices: array![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            topology: Topology::Loop,
            mahal_radius: 1.0,
            cov_diag: vec![1.0, 1.0],
            subdivision_level: None,
        };
        sq.validate().unwrap();
        assert!(sq.contains(array![0.5, 0.5].view()));
        assert!(!sq.contains(array![2.0, 2.0].view()));
        assert!(sq.contains(array![1.0, 0.5].view()));
        assert!(sq.contains(array![0.0, 0.0].view()));
    }

    #[test]
    fn bowtie_rejected() {
        let bow = BoundarySet {
            vertices: array![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]],
            topology: Topology::Loop,
            mahal_radius: 1.0,
            cov_diag: vec![1.0, 1.0],
            subdivision_level: None,
        };
        assert!(bow.validate().is_err());
    }

    #[test]
    fn sphere_containment() {
        let b = make_ball_boundary(3, 1.0, &[1.0, 4.0, 0.25], 200).unwrap();
        assert!(b.contains(array![0.0, 0.0, 0.0].view()));
        assert!(b.contains(array![0.0, 1.9, 0.0].view()));
        assert!(!b.contains(array![0.0, 0.0, 0.6].view()));
        assert!(!b.contains(array![3.0, 3.0, 3.0].view()));
        let v = b.vertices().row(7).to_owned();
        assert!(b.contains(v.view()));
    }

    #[test]
    fn broken_mesh_rejected() {
        let b = make_ball_boundary(3, 1.0, &[1.0; 3], 12).unwrap();
        let Topology::Triangles(mut faces) = b.topology().clone() else { unreachable!() };
        faces.pop();
        let open = BoundarySet { topology: Topology::Triangles(faces), ..b };
        assert!(open.validate().is_err());
    }

    #[test]
    fn exports() {
        let b = make_ball_boundary(3, 1.0, &[1.0; 3], 12).unwrap();
        let mut off = Vec::new();
        b.write_off(&mut off).unwrap();
        let text = String::from_utf8(off).unwrap();
        assert!(text.starts_with("OFF\n12 20 0\n"));
        assert_eq!(text.lines().count(), 2 + 12 + 20);
        let c = make_ball_boundary(2, 1.0, &[1.0; 2], 8).unwrap();
        assert!(c.write_off(Vec::new()).is_err());
        let mut csv = Vec::new();
        c.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 9);
    }
}

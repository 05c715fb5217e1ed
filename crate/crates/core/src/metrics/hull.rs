//! Incremental 3D convex hull, used only for its enclosed volume.

use std::collections::HashMap;

use crate::geometry::Vec3;

struct Face {
    v: [usize; 3],
    normal: Vec3,
    offset: f64,
    /// Neighbour across edge v[i] -> v[(i + 1) % 3].
    nb: [usize; 3],
    outside: Vec<usize>,
    alive: bool,
    stamp: usize,
}

impl Face {
    fn new(pts: &[Vec3], v: [usize; 3]) -> Face {
        let [a, b, c] = v.map(|i| pts[i]);
        let n = (b - a).cross(c - a);
        let len = n.norm();
        let normal = if len > 0.0 { n * (1.0 / len) } else { Vec3::ZERO };
        Face { v, normal, offset: normal.dot(a), nb: [usize::MAX; 3], outside: Vec::new(), alive: true, stamp: 0 }
    }

    fn distance(&self, p: Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

fn dedup(points: &[Vec3]) -> Vec<Vec3> {
    let mut keyed: Vec<([u64; 3], Vec3)> = points
        .iter()
        .filter(|p| p.is_finite())
        .map(|p| ([p.x.to_bits(), p.y.to_bits(), p.z.to_bits()], *p))
        .collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0));
    keyed.dedup_by(|a, b| a.0 == b.0);
    keyed.into_iter().map(|(_, p)| p).collect()
}

fn farthest_by(pts: &[Vec3], f: impl Fn(Vec3) -> f64) -> (usize, f64) {
    pts.iter()
        .enumerate()
        .map(|(i, p)| (i, f(*p)))
        .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
}

fn initial_simplex(pts: &[Vec3], eps: f64) -> Option<[usize; 4]> {
    let i0 = farthest_by(pts, |p| -p.x).0;
    let (i1, d1) = farthest_by(pts, |p| p.distance(pts[i0]));
    if d1 < eps {
        return None;
    }
    let axis = (pts[i1] - pts[i0]) * (1.0 / d1);
    let (i2, d2) = farthest_by(pts, |p| {
        let r = p - pts[i0];
        (r - axis * r.dot(axis)).norm()
    });
    if d2 < eps {
        return None;
    }
    let plane_n = (pts[i1] - pts[i0]).cross(pts[i2] - pts[i0]).normalized().ok()?;
    let (i3, d3) = farthest_by(pts, |p| (p - pts[i0]).dot(plane_n).abs());
    if d3 < eps {
        return None;
    }
    Some([i0, i1, i2, i3])
}

/// Volume of the convex hull of `points`; zero for flat or degenerate sets.
///
/// Quickhull: faces keep the points outside them, and each step lifts the
/// farthest such point, replacing the faces it sees with a cone to the horizon.
pub fn convex_hull_volume(points: &[Vec3]) -> f64 {
    let pts = dedup(points);
    if pts.len() < 4 {
        return 0.0;
    }
    let (lo, hi) = pts.iter().fold(
        (Vec3::new(f64::MAX, f64::MAX, f64::MAX), Vec3::new(f64::MIN, f64::MIN, f64::MIN)),
        |(lo, hi), p| {
            (
                Vec3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z)),
                Vec3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z)),
            )
        },
    );
    let scale = lo.distance(hi);
    if scale < 1e-12 {
        return 0.0;
    }
    let eps = 1e-9 * scale;
    let Some(seed) = initial_simplex(&pts, eps) else {
        return 0.0;
    };
    let interior = seed.iter().fold(Vec3::ZERO, |a, &i| a + pts[i]) * 0.25;

    let mut faces: Vec<Face> = Vec::new();
    for skip in 0..4 {
        let mut v: Vec<usize> = (0..4).filter(|&k| k != skip).map(|k| seed[k]).collect();
        let mut f = Face::new(&pts, [v[0], v[1], v[2]]);
        if f.distance(interior) > 0.0 {
            v.swap(1, 2);
            f = Face::new(&pts, [v[0], v[1], v[2]]);
        }
        faces.push(f);
    }
    for a in 0..4 {
        for i in 0..3 {
            let (x, y) = (faces[a].v[i], faces[a].v[(i + 1) % 3]);
            let b = (0..4)
                .find(|&b| b != a && (0..3).any(|j| faces[b].v[j] == y && faces[b].v[(j + 1) % 3] == x))
                .expect("tetrahedron faces are adjacent");
            faces[a].nb[i] = b;
        }
    }
    for (pi, p) in pts.iter().enumerate() {
        if seed.contains(&pi) {
            continue;
        }
        if let Some(f) = (0..4).find(|&f| faces[f].distance(*p) > eps) {
            faces[f].outside.push(pi);
        }
    }

    let mut pending: Vec<usize> = (0..4).collect();
    let mut stamp = 0;
    let mut by_start: HashMap<usize, usize> = HashMap::new();
    let mut by_end: HashMap<usize, usize> = HashMap::new();
    while let Some(f0) = pending.pop() {
        if !faces[f0].alive || faces[f0].outside.is_empty() {
            continue;
        }
        let eye = *faces[f0]
            .outside
            .iter()
            .max_by(|&&a, &&b| faces[f0].distance(pts[a]).total_cmp(&faces[f0].distance(pts[b])))
            .expect("non-empty");
        let p = pts[eye];

        stamp += 1;
        let mut visible = vec![f0];
        faces[f0].stamp = stamp;
        let mut horizon: Vec<(usize, usize, usize)> = Vec::new();
        let mut k = 0;
        while k < visible.len() {
            let f = visible[k];
            k += 1;
            for i in 0..3 {
                let n = faces[f].nb[i];
                if faces[n].stamp == stamp {
                    continue;
                }
                if faces[n].distance(p) > eps {
                    faces[n].stamp = stamp;
                    visible.push(n);
                } else {
                    horizon.push((faces[f].v[i], faces[f].v[(i + 1) % 3], n));
                }
            }
        }
        // A horizon edge may be reported before its far face turns out visible.
        horizon.retain(|&(_, _, n)| faces[n].stamp != stamp);

        let mut orphans = Vec::new();
        for &f in &visible {
            faces[f].alive = false;
            orphans.append(&mut faces[f].outside);
        }
        by_start.clear();
        by_end.clear();
        let first_new = faces.len();
        for &(a, b, n) in &horizon {
            let idx = faces.len();
            let mut face = Face::new(&pts, [a, b, eye]);
            face.nb[0] = n;
            if let Some(j) = (0..3).find(|&j| faces[n].v[j] == b && faces[n].v[(j + 1) % 3] == a) {
                faces[n].nb[j] = idx;
            }
            faces.push(face);
            by_start.insert(a, idx);
            by_end.insert(b, idx);
        }
        for idx in first_new..faces.len() {
            let [a, b, _] = faces[idx].v;
            let next = by_start.get(&b).copied();
            let prev = by_end.get(&a).copied();
            if let (Some(nx), Some(pv)) = (next, prev) {
                faces[idx].nb[1] = nx;
                faces[idx].nb[2] = pv;
            }
        }
        for q in orphans {
            if q == eye {
                continue;
            }
            if let Some(f) = (first_new..faces.len()).find(|&f| faces[f].distance(pts[q]) > eps) {
                faces[f].outside.push(q);
            }
        }
        pending.extend((first_new..faces.len()).filter(|&f| !faces[f].outside.is_empty()));
    }

    faces
        .iter()
        .filter(|f| f.alive)
        .map(|f| {
            let [a, b, c] = f.v.map(|i| pts[i] - interior);
            a.dot(b.cross(c)) / 6.0
        })
        .sum::<f64>()
        .abs()
}

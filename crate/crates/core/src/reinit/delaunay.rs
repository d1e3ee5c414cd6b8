//! Incremental Delaunay tetrahedralization (Bowyer–Watson).
//!
//! Predicates are exact (adaptive-precision orient3d/insphere). Cospherical
//! configurations are resolved by symbolically lifting each point by an
//! infinitesimal that grows with its index, which makes every insphere
//! decision consistent and the result a proper triangulation.

use std::collections::HashMap;

use robust::{orient3d, insphere, Coord3D};

use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};

const INF: u32 = u32::MAX;
const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
struct Tet {
    v: [u32; 4],
    /// `n[i]` is the neighbor across the face opposite `v[i]`.
    n: [u32; 4],
}

impl Tet {
    fn inf_slot(&self) -> Option<usize> {
        self.v.iter().position(|&x| x == INF)
    }
}

/// Finite tetrahedra of a Delaunay complex, positively oriented.
#[derive(Debug, Clone)]
pub struct Tetrahedralization {
    pub points: Vec<Vec3>,
    pub tets: Vec<[usize; 4]>,
    /// Neighbor across the face opposite each vertex; `None` on the convex hull.
    pub neighbors: Vec<[Option<usize>; 4]>,
    /// Exact duplicates left out of the complex, as (skipped, kept) index pairs.
    pub duplicates: Vec<(usize, usize)>,
}

fn coord(p: &Vec3) -> Coord3D<f64> {
    Coord3D { x: p.x, y: p.y, z: p.z }
}

/// Positive when `d` lies on the side of plane (a, b, c) that makes the tetrahedron positively oriented.
pub(crate) fn orient(a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3) -> f64 {
    orient3d(coord(a), coord(b), coord(c), coord(d))
}

struct Builder<'a> {
    pts: &'a [Vec3],
    tets: Vec<Tet>,
    alive: Vec<bool>,
    mark: Vec<u32>,
    stamp: u32,
    last: usize,
}

impl<'a> Builder<'a> {
    fn p(&self, i: u32) -> &Vec3 {
        &self.pts[i as usize]
    }

    fn orient_with(&self, v: &[u32; 4], slot: usize, q: u32) -> f64 {
        let mut w = *v;
        w[slot] = q;
        orient(self.p(w[0]), self.p(w[1]), self.p(w[2]), self.p(w[3]))
    }

    /// Whether `q` lies strictly inside the circumsphere of finite tet `t`
    /// after symbolic perturbation.
    fn in_sphere(&self, t: &Tet, q: u32) -> bool {
        let [a, b, c, d] = t.v.map(|i| coord(self.p(i)));
        let s = insphere(a, b, c, d, coord(self.p(q)));
        if s != 0.0 {
            return s > 0.0;
        }
        // Raising the lift of a tet vertex v by ε raises the lifted plane at q by
        // ε·λ_v(q); raising q's own lift pushes it outside. The largest index dominates.
        let mut order: Vec<(u32, Option<usize>)> = t.v.iter().enumerate().map(|(k, &i)| (i, Some(k))).collect();
        order.push((q, None));
        order.sort_by(|x, y| y.0.cmp(&x.0));
        for (_, slot) in order {
            match slot {
                None => return false,
                Some(k) => {
                    let o = self.orient_with(&t.v, k, q);
                    if o != 0.0 {
                        return o > 0.0;
                    }
                }
            }
        }
        false
    }

    fn conflict(&self, ti: usize, q: u32) -> bool {
        let t = &self.tets[ti];
        match t.inf_slot() {
            None => self.in_sphere(t, q),
            Some(s) => {
                let o = self.orient_with(&t.v, s, q);
                if o != 0.0 {
                    o > 0.0
                } else {
                    self.in_sphere(&self.tets[t.n[s] as usize], q)
                }
            }
        }
    }

    fn locate(&self, q: u32) -> Option<usize> {
        let mut t = self.last;
        if let Some(s) = self.tets[t].inf_slot() {
            t = self.tets[t].n[s] as usize;
        }
        let cap = 64 + 4 * self.tets.len();
        for step in 0..cap {
            let tet = &self.tets[t];
            let mut next = None;
            for r in 0..4 {
                let k = (r + step) % 4;
                if self.orient_with(&tet.v, k, q) < 0.0 {
                    next = Some(tet.n[k] as usize);
                    break;
                }
            }
            match next {
                None => return Some(t),
                Some(nb) if self.tets[nb].inf_slot().is_some() => return Some(nb),
                Some(nb) => t = nb,
            }
        }
        None
    }

    fn brute_force_seed(&self, q: u32) -> Option<usize> {
        (0..self.tets.len()).find(|&t| self.alive[t] && self.conflict(t, q))
    }

    fn insert(&mut self, q: u32) -> Result<()> {
        let seed = match self.locate(q) {
            Some(t) if self.conflict(t, q) => t,
            _ => self
                .brute_force_seed(q)
                .ok_or_else(|| Error::Geometry(format!("point {q} conflicts with no tetrahedron")))?,
        };
        self.stamp += 2;
        let (yes, no) = (self.stamp, self.stamp + 1);
        self.mark[seed] = yes;
        let mut stack = vec![seed];
        let mut cavity = Vec::new();
        let mut boundary = Vec::new();
        while let Some(t) = stack.pop() {
            cavity.push(t);
            for k in 0..4 {
                let nb = self.tets[t].n[k] as usize;
                if self.mark[nb] == yes {
                    continue;
                }
                if self.mark[nb] != no && self.conflict(nb, q) {
                    self.mark[nb] = yes;
                    stack.push(nb);
                } else {
                    self.mark[nb] = no;
                    boundary.push((t, k, nb));
                }
            }
        }
        let mut faces: HashMap<[u32; 3], (usize, usize)> = HashMap::with_capacity(boundary.len() * 3);
        for &(t, k, nb) in &boundary {
            let mut v = self.tets[t].v;
            v[k] = q;
            let new = self.tets.len();
            let mut n = [NONE; 4];
            n[k] = nb as u32;
            let back = self.tets[nb].n.iter().position(|&x| x as usize == t).expect("neighbor link is symmetric");
            self.tets[nb].n[back] = new as u32;
            self.tets.push(Tet { v, n });
            self.alive.push(true);
            self.mark.push(0);
            for j in (0..4).filter(|&j| j != k) {
                let key = face_key(&v, j);
                if let Some((other, slot)) = faces.remove(&key) {
                    self.tets[new].n[j] = other as u32;
                    self.tets[other].n[slot] = new as u32;
                } else {
                    faces.insert(key, (new, j));
                }
            }
            if v.iter().all(|&x| x != INF) {
                self.last = new;
            }
        }
        if !faces.is_empty() {
            return Err(Error::Geometry("cavity boundary is not closed".into()));
        }
        for t in cavity {
            self.alive[t] = false;
        }
        Ok(())
    }
}

fn face_key(v: &[u32; 4], skip: usize) -> [u32; 3] {
    let mut k = [0; 3];
    let mut i = 0;
    for (j, &x) in v.iter().enumerate() {
        if j != skip {
            k[i] = x;
            i += 1;
        }
    }
    k.sort_unstable();
    k
}

/// Spreads 10 bits of `x` over every third bit.
fn spread(mut x: u64) -> u64 {
    x &= 0x3ff;
    x = (x | (x << 16)) & 0x030000ff;
    x = (x | (x << 8)) & 0x0300f00f;
    x = (x | (x << 4)) & 0x030c30c3;
    x = (x | (x << 2)) & 0x09249249;
    x
}

fn morton_order(points: &[Vec3], idx: &[usize]) -> Vec<usize> {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for &i in idx {
        lo = lo.inf(&points[i]);
        hi = hi.sup(&points[i]);
    }
    let extent = (hi - lo).max().max(f64::MIN_POSITIVE);
    let mut keyed: Vec<(u64, usize)> = idx
        .iter()
        .map(|&i| {
            let q = (points[i] - lo) / extent * 1023.0;
            let code = spread(q.x as u64) | (spread(q.y as u64) << 1) | (spread(q.z as u64) << 2);
            (code, i)
        })
        .collect();
    keyed.sort_unstable();
    keyed.into_iter().map(|(_, i)| i).collect()
}

pub fn delaunay3d(points: &[Vec3]) -> Result<Tetrahedralization> {
    if points.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
        return Err(Error::arg("non-finite point in Delaunay input"));
    }
    if points.len() >= INF as usize {
        return Err(Error::arg("too many points"));
    }
    let mut first_of: HashMap<[u64; 3], usize> = HashMap::with_capacity(points.len());
    let mut duplicates = Vec::new();
    let mut unique = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        // +0.0 and -0.0 are the same point
        let key = [p.x + 0.0, p.y + 0.0, p.z + 0.0].map(f64::to_bits);
        match first_of.get(&key) {
            Some(&j) => duplicates.push((i, j)),
            None => {
                first_of.insert(key, i);
                unique.push(i);
            }
        }
    }
    if unique.len() < 4 {
        return Err(Error::Geometry(format!("{} distinct points cannot span a tetrahedron", unique.len())));
    }
    let order = morton_order(points, &unique);

    // seed tetrahedron from the first non-degenerate quadruple
    let a = order[0];
    let b = *order[1..].iter().find(|&&i| points[i] != points[a]).unwrap();
    let c = order
        .iter()
        .copied()
        .find(|&i| (points[b] - points[a]).cross(&(points[i] - points[a])).norm_squared() > 0.0)
        .ok_or_else(|| Error::Geometry("all points are collinear".into()))?;
    let d = order
        .iter()
        .copied()
        .find(|&i| orient(&points[a], &points[b], &points[c], &points[i]) != 0.0)
        .ok_or_else(|| Error::Geometry("all points are coplanar".into()))?;
    let mut seed = [a as u32, b as u32, c as u32, d as u32];
    if orient(&points[a], &points[b], &points[c], &points[d]) < 0.0 {
        seed.swap(0, 1);
    }

    let mut bld = Builder {
        pts: points,
        tets: Vec::with_capacity(8 * unique.len()),
        alive: Vec::new(),
        mark: Vec::new(),
        stamp: 0,
        last: 0,
    };
    bld.tets.push(Tet { v: seed, n: [NONE; 4] });
    for i in 0..4 {
        let mut v = seed;
        v[i] = INF;
        // keep the convention: replacing INF by an outside point is positively oriented
        let others: Vec<usize> = (0..4).filter(|&j| j != i).collect();
        v.swap(others[0], others[1]);
        bld.tets.push(Tet { v, n: [NONE; 4] });
    }
    let mut faces: HashMap<[u32; 3], (usize, usize)> = HashMap::new();
    for t in 0..5 {
        for j in 0..4 {
            let key = face_key(&bld.tets[t].v, j);
            if let Some((o, s)) = faces.remove(&key) {
                bld.tets[t].n[j] = o as u32;
                bld.tets[o].n[s] = t as u32;
            } else {
                faces.insert(key, (t, j));
            }
        }
    }
    bld.alive = vec![true; 5];
    bld.mark = vec![0; 5];

    for &i in &order {
        if seed.contains(&(i as u32)) {
            continue;
        }
        bld.insert(i as u32)?;
    }

    let mut remap = vec![usize::MAX; bld.tets.len()];
    let mut tets = Vec::new();
    for (t, tet) in bld.tets.iter().enumerate() {
        if bld.alive[t] && tet.inf_slot().is_none() {
            remap[t] = tets.len();
            tets.push(tet.v.map(|x| x as usize));
        }
    }
    let neighbors = bld
        .tets
        .iter()
        .enumerate()
        .filter(|(t, _)| remap[*t] != usize::MAX)
        .map(|(_, tet)| {
            tet.n.map(|n| {
                let r = remap[n as usize];
                (r != usize::MAX).then_some(r)
            })
        })
        .collect();
    Ok(Tetrahedralization {
        points: points.to_vec(),
        tets,
        neighbors,
        duplicates,
    })
}

/// Circumcenter and circumradius of a tetrahedron; `None` when flat.
pub fn circumsphere(a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3) -> Option<(Vec3, f64)> {
    let (u, v, w) = (b - a, c - a, d - a);
    let m = Mat3::from_rows(&[u.transpose(), v.transpose(), w.transpose()]);
    let rhs = 0.5 * Vec3::new(u.norm_squared(), v.norm_squared(), w.norm_squared());
    let x = m.lu().solve(&rhs)?;
    if !x.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some((a + x, x.norm()))
}

/// Radius of the circle through a triangle's corners; infinite when collinear.
pub fn triangle_circumradius(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let (ab, bc, ca) = ((b - a).norm(), (c - b).norm(), (a - c).norm());
    let twice_area = (b - a).cross(&(c - a)).norm();
    if twice_area == 0.0 {
        return f64::INFINITY;
    }
    ab * bc * ca / (2.0 * twice_area)
}

impl Tetrahedralization {
    pub fn circumradius(&self, t: usize) -> f64 {
        let [a, b, c, d] = self.tets[t].map(|i| self.points[i]);
        circumsphere(&a, &b, &c, &d).map_or(f64::INFINITY, |s| s.1)
    }

    /// Vertex indices of the face opposite `tets[t][k]`, ordered to face outward.
    pub fn face(&self, t: usize, k: usize) -> [usize; 3] {
        let v = self.tets[t];
        // for a positive tet (a, b, c, d), faces (b, d, c), (a, c, d), (a, d, b), (a, b, c) point outward
        const FACES: [[usize; 3]; 4] = [[1, 3, 2], [0, 2, 3], [0, 3, 1], [0, 1, 2]];
        FACES[k].map(|j| v[j])
    }

    pub fn volume(&self, t: usize) -> f64 {
        let [a, b, c, d] = self.tets[t].map(|i| self.points[i]);
        (b - a).cross(&(c - a)).dot(&(d - a)).abs() / 6.0
    }
}

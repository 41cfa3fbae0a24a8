//! Scenes made of finite rectangles, ray-cast analytically.

use crate::geometry::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub center: Vec3,
    pub normal: Vec3,
    /// In-plane unit axes.
    pub u: Vec3,
    pub v: Vec3,
    pub half_u: f64,
    pub half_v: f64,
    pub reflectance: f32,
}

impl Rect {
    /// Rectangle spanned by unit axes `u`, `v`; the normal is `u × v`.
    pub fn new(center: Vec3, u: Vec3, v: Vec3, half_u: f64, half_v: f64, reflectance: f32) -> Self {
        let u = u.normalize();
        let v = v.normalize();
        Self { center, normal: u.cross(&v).normalize(), u, v, half_u, half_v, reflectance }
    }

    /// Ray parameter of the hit, if any.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let denom = self.normal.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let s = self.normal.dot(&(self.center - origin)) / denom;
        if s <= 1e-9 {
            return None;
        }
        let hit = origin + dir * s - self.center;
        (hit.dot(&self.u).abs() <= self.half_u && hit.dot(&self.v).abs() <= self.half_v).then_some(s)
    }

    /// Distance from `p` to the rectangle's supporting plane.
    pub fn plane_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(&(p - self.center)).abs()
    }

    /// Distance from `p` to the closest point of the rectangle.
    pub fn distance(&self, p: &Vec3) -> f64 {
        let d = p - self.center;
        let a = d.dot(&self.u).clamp(-self.half_u, self.half_u);
        let b = d.dot(&self.v).clamp(-self.half_v, self.half_v);
        (p - (self.center + a * self.u + b * self.v)).norm()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Scene {
    pub rects: Vec<Rect>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub range: f64,
    pub reflectance: f32,
    pub rect: usize,
}

impl Scene {
    pub fn raycast(&self, origin: &Vec3, dir: &Vec3) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, r) in self.rects.iter().enumerate() {
            if let Some(s) = r.intersect(origin, dir) {
                if best.is_none_or(|b| s < b.range) {
                    best = Some(Hit { range: s, reflectance: r.reflectance, rect: i });
                }
            }
        }
        best
    }

    /// Distance from `p` to the nearest surface.
    pub fn surface_distance(&self, p: &Vec3) -> f64 {
        self.rects.iter().map(|r| r.distance(p)).fold(f64::INFINITY, f64::min)
    }

    /// Axis-aligned box `[min, max]` with inward-facing faces (a room).
    pub fn add_room(&mut self, min: Vec3, max: Vec3, reflectances: [f32; 6]) {
        self.add_box_faces(min, max, reflectances, true, true);
    }

    /// Axis-aligned solid box; `with_top` adds the top face.
    pub fn add_block(&mut self, min: Vec3, max: Vec3, reflectance: f32, with_top: bool) {
        self.add_box_faces(min, max, [reflectance; 6], false, with_top);
    }

    fn add_box_faces(&mut self, min: Vec3, max: Vec3, refl: [f32; 6], inward: bool, top: bool) {
        let c = 0.5 * (min + max);
        let h = 0.5 * (max - min);
        let (x, y, z) = (Vec3::x(), Vec3::y(), Vec3::z());
        // (center offset axis, u, v, half_u, half_v); normals u×v point outward
        let faces = [
            (c + h.x * x, y, z, h.y, h.z),
            (c - h.x * x, z, y, h.z, h.y),
            (c + h.y * y, z, x, h.z, h.x),
            (c - h.y * y, x, z, h.x, h.z),
            (c + h.z * z, x, y, h.x, h.y),
            (c - h.z * z, y, x, h.y, h.x),
        ];
        for (k, (center, u, v, hu, hv)) in faces.into_iter().enumerate() {
            if k == 4 && !top {
                continue;
            }
            let mut r = Rect::new(center, u, v, hu, hv, refl[k]);
            if inward {
                r.normal = -r.normal;
            }
            self.rects.push(r);
        }
    }

    /// Vertical wall segment from `a` to `b` (xy), spanning `z0..z1`.
    pub fn add_wall(&mut self, a: (f64, f64), b: (f64, f64), z0: f64, z1: f64, reflectance: f32) {
        let pa = Vec3::new(a.0, a.1, 0.0);
        let pb = Vec3::new(b.0, b.1, 0.0);
        let center = 0.5 * (pa + pb) + Vec3::new(0.0, 0.0, 0.5 * (z0 + z1));
        let u = pb - pa;
        self.rects.push(Rect::new(center, u, Vec3::z(), 0.5 * u.norm(), 0.5 * (z1 - z0), reflectance));
    }

    /// Room of about 30 × 20 × 5 m with pillars and boxes; the sensor
    /// frame origin sits 1.5 m above the floor at the room center.
    pub fn default_room() -> Self {
        let mut s = Scene::default();
        s.add_room(Vec3::new(-15.0, -10.0, -1.5), Vec3::new(15.0, 10.0, 3.5), [60.0, 90.0, 120.0, 150.0, 40.0, 80.0]);
        for (k, (x, y)) in [(-11.0, -6.0), (11.0, -6.0), (-11.0, 6.0), (11.0, 6.0), (0.0, 7.5), (0.0, -7.5)].into_iter().enumerate() {
            s.add_block(Vec3::new(x - 0.4, y - 0.4, -1.5), Vec3::new(x + 0.4, y + 0.4, 3.5), 100.0 + 20.0 * k as f32, false);
        }
        s.add_block(Vec3::new(4.0, -1.0, -1.5), Vec3::new(5.0, 0.5, -0.5), 200.0, true);
        s.add_block(Vec3::new(-5.5, 4.0, -1.5), Vec3::new(-4.0, 5.0, 0.0), 180.0, true);
        s.add_block(Vec3::new(13.0, -2.0, -1.5), Vec3::new(14.5, 2.0, 0.5), 220.0, true);
        s.add_block(Vec3::new(-14.5, -3.0, -1.5), Vec3::new(-13.0, -1.0, 1.0), 30.0, true);
        // cabinets and pilasters along the walls at irregular spacing, so
        // that no heading looks at a bare wall only
        for (k, (x0, x1, top)) in [(-12.5, -11.2, 0.3), (-7.0, -5.2, -0.4), (-1.5, -0.7, 3.5), (3.0, 4.6, 0.8), (8.2, 8.6, 3.5), (10.5, 12.4, -0.2)]
            .into_iter()
            .enumerate()
        {
            s.add_block(Vec3::new(x0, -10.0, -1.5), Vec3::new(x1, -9.4, top), 60.0 + 25.0 * k as f32, top < 3.5);
        }
        for (k, (x0, x1, top)) in [(-13.0, -12.6, 3.5), (-9.5, -7.9, 0.5), (-4.2, -3.0, -0.3), (1.0, 2.6, 1.2), (6.1, 6.5, 3.5), (9.0, 10.7, 0.0)]
            .into_iter()
            .enumerate()
        {
            s.add_block(Vec3::new(x0, 9.4, -1.5), Vec3::new(x1, 10.0, top), 70.0 + 25.0 * k as f32, top < 3.5);
        }
        for (k, (y0, y1, top)) in [(-8.0, -6.6, 0.4), (4.5, 4.9, 3.5), (7.0, 8.3, -0.5)].into_iter().enumerate() {
            s.add_block(Vec3::new(14.4, y0, -1.5), Vec3::new(15.0, y1, top), 90.0 + 30.0 * k as f32, top < 3.5);
            s.add_block(Vec3::new(-15.0, -y1, -1.5), Vec3::new(-14.4, -y0, top), 110.0 + 30.0 * k as f32, top < 3.5);
        }
        s
    }

    /// Square ring corridor around a `side` × `side` loop centered at
    /// `(0, side/2)`, with irregularly spaced pilasters on both walls.
    pub fn ring_corridor(side: f64, width: f64) -> Self {
        let mut s = Scene::default();
        let (z0, z1) = (-1.5, 2.5);
        let h = side / 2.0;
        let cy = h;
        let outer = h + width / 2.0;
        let inner = h - width / 2.0;
        let corners = |r: f64| [(-r, cy - r), (r, cy - r), (r, cy + r), (-r, cy + r)];
        let oc = corners(outer);
        let ic = corners(inner);
        for k in 0..4 {
            let refl_o = [70.0, 110.0, 150.0, 190.0][k];
            let refl_i = [50.0, 90.0, 130.0, 170.0][k];
            s.add_wall(oc[k], oc[(k + 1) % 4], z0, z1, refl_o);
            s.add_wall(ic[(k + 1) % 4], ic[k], z0, z1, refl_i);
        }
        // floor and ceiling as one slab each over the ring's bounding square
        let big = outer + 0.5;
        s.rects.push(Rect::new(Vec3::new(0.0, cy, z0), Vec3::x(), Vec3::y(), big, big, 45.0));
        s.rects.push(Rect::new(Vec3::new(0.0, cy, z1), Vec3::y(), Vec3::x(), big, big, 65.0));
        // pilasters on the outer and inner walls
        let mut k = 0;
        let step = 5.0;
        let n = (side / step).round() as i32;
        for side_idx in 0..4 {
            for i in 0..n {
                for (j, (r, depth)) in [(outer, -0.3), (inner, 0.3)].into_iter().enumerate() {
                    // deterministic jitter keeps the corridor from looking periodic
                    let jitter = 1.2 * (7.3 * i as f64 + 2.9 * side_idx as f64 + 1.7 * j as f64).sin();
                    let a = -h + step * (i as f64 + 0.5) + jitter;
                    let (cx, cy2) = match side_idx {
                        0 => (a, cy - r),
                        1 => (r, cy + a),
                        2 => (-a, cy + r),
                        _ => (-r, cy - a),
                    };
                    let inward = match side_idx {
                        0 => Vec3::new(0.0, -depth, 0.0),
                        1 => Vec3::new(depth, 0.0, 0.0),
                        2 => Vec3::new(0.0, depth, 0.0),
                        _ => Vec3::new(-depth, 0.0, 0.0),
                    };
                    let c = Vec3::new(cx, cy2, 0.0) + 0.5 * inward;
                    let half = Vec3::new(0.25, 0.25, 0.0).sup(&(0.5 * inward.abs()));
                    let refl = 100.0 + 10.0 * (k % 12) as f32;
                    s.add_block(Vec3::new(c.x - half.x, c.y - half.y, z0), Vec3::new(c.x + half.x, c.y + half.y, z1), refl, false);
                    k += 1;
                }
            }
        }
        s
    }

    /// Closed cube of side `2·half` centered at the origin.
    pub fn cube_room(half: f64) -> Self {
        let mut s = Scene::default();
        s.add_room(Vec3::repeat(-half), Vec3::repeat(half), [50.0, 70.0, 90.0, 110.0, 130.0, 150.0]);
        s
    }
}

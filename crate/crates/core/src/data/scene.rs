//! Procedural ray-traced scenes with exact per-pixel depth.

use rand::Rng;

use super::{DepthMap, Image};
use crate::geometry::Camera;

type V3 = [f64; 3];

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn add_scaled(a: V3, b: V3, s: f64) -> V3 {
    [a[0] + b[0] * s, a[1] + b[1] * s, a[2] + b[2] * s]
}

fn norm(a: V3) -> f64 {
    dot(a, a).sqrt()
}

fn unit(a: V3) -> V3 {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Material {
    pub albedo: V3,
    /// Side length of a world-space checkerboard modulating the albedo.
    pub checker: Option<f64>,
}

impl Material {
    pub fn plain(albedo: V3) -> Self {
        Self { albedo, checker: None }
    }

    fn color_at(&self, p: V3) -> V3 {
        match self.checker {
            Some(s) => {
                let parity = (p[0] / s).floor() as i64 + (p[1] / s).floor() as i64 + (p[2] / s).floor() as i64;
                let k = if parity.rem_euclid(2) == 0 { 1.0 } else { 0.6 };
                self.albedo.map(|a| a * k)
            }
            None => self.albedo,
        }
    }
}

/// Scene primitives in the world frame (camera at the origin).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Primitive {
    /// Points `p` with `normal · p = offset`; `normal` is unit length.
    Plane {
        normal: V3,
        offset: f64,
        material: Material,
    },
    Sphere {
        center: V3,
        radius: f64,
        material: Material,
    },
    /// Axis-aligned box.
    Cuboid {
        min: V3,
        max: V3,
        material: Material,
    },
}

impl Primitive {
    /// Smallest ray parameter `t > eps` with `t·dir` on the surface, and the
    /// outward unit normal there.
    fn intersect(&self, origin: V3, dir: V3, eps: f64) -> Option<(f64, V3)> {
        match *self {
            Primitive::Plane { normal, offset, .. } => {
                let denom = dot(normal, dir);
                if denom.abs() < 1e-15 {
                    return None;
                }
                let t = (offset - dot(normal, origin)) / denom;
                let n = if denom > 0.0 { normal.map(|c| -c) } else { normal };
                (t > eps).then_some((t, n))
            }
            Primitive::Sphere { center, radius, .. } => {
                let oc = sub(origin, center);
                let a = dot(dir, dir);
                let b = dot(oc, dir);
                let c = dot(oc, oc) - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t = [(-b - sq) / a, (-b + sq) / a].into_iter().find(|&t| t > eps)?;
                let p = add_scaled(origin, dir, t);
                Some((t, unit(sub(p, center))))
            }
            Primitive::Cuboid { min, max, .. } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                let (mut n0, mut n1) = ([0.0; 3], [0.0; 3]);
                for i in 0..3 {
                    if dir[i].abs() < 1e-15 {
                        if origin[i] < min[i] || origin[i] > max[i] {
                            return None;
                        }
                        continue;
                    }
                    let (mut a, mut b) = ((min[i] - origin[i]) / dir[i], (max[i] - origin[i]) / dir[i]);
                    let mut na = [0.0; 3];
                    na[i] = -dir[i].signum();
                    if a > b {
                        std::mem::swap(&mut a, &mut b);
                    }
                    if a > t0 {
                        t0 = a;
                        n0 = na;
                    }
                    if b < t1 {
                        t1 = b;
                        n1 = na.map(|c| -c);
                    }
                }
                if t0 > t1 {
                    return None;
                }
                if t0 > eps {
                    Some((t0, n0))
                } else if t1 > eps {
                    Some((t1, n1))
                } else {
                    None
                }
            }
        }
    }

    fn material(&self) -> &Material {
        match self {
            Primitive::Plane { material, .. }
            | Primitive::Sphere { material, .. }
            | Primitive::Cuboid { material, .. } => material,
        }
    }
}

/// Everything needed to render a scene for a given camera.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    /// Downward camera pitch in radians (rotation about the camera x axis).
    pub pitch: f64,
    pub primitives: Vec<Primitive>,
    /// Unit vector towards the light.
    pub light: V3,
    pub ambient: f64,
}

/// Camera, ground-truth depth and rendered image.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub camera: Camera,
    pub depth: DepthMap,
    pub image: Image,
}

impl SceneSpec {
    /// World-frame direction of the (unnormalised) camera ray.
    fn to_world(&self, r: V3) -> V3 {
        let (s, c) = self.pitch.sin_cos();
        [r[0], c * r[1] + s * r[2], -s * r[1] + c * r[2]]
    }

    fn hit(&self, origin: V3, dir: V3, eps: f64) -> Option<(f64, V3, usize)> {
        self.primitives
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.intersect(origin, dir, eps).map(|(t, n)| (t, n, i)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    fn sky(&self, dir: V3) -> V3 {
        let up = (-unit(dir)[1]).clamp(0.0, 1.0);
        [0.75 - 0.25 * up, 0.82 - 0.12 * up, 0.92]
    }
}

/// Ray-traces `spec` through `camera`. Depth is the Euclidean distance along
/// each viewing ray, clipped to `far`; rays that hit nothing get `far`.
/// Depth is rounded to `f32` and colour to 8 bits so both survive storage.
pub fn render(spec: &SceneSpec, camera: &Camera, far: f64) -> Scene {
    let (w, h) = (camera.width, camera.height);
    let mut depth = vec![0.0; w * h];
    let mut image = Image::filled(w, h, 0.0);
    for v in 0..h {
        for u in 0..w {
            let dir = spec.to_world(camera.ray_unchecked(u as f64, v as f64));
            let len = norm(dir);
            let (d, rgb) = match spec.hit([0.0; 3], dir, 1e-9) {
                Some((t, n, i)) if t * len < far => {
                    let p = add_scaled([0.0; 3], dir, t);
                    let lambert = dot(n, spec.light).max(0.0);
                    let shadowed = lambert > 0.0 && spec.hit(add_scaled(p, n, 1e-6), spec.light, 1e-9).is_some();
                    let diffuse = if shadowed { 0.0 } else { lambert };
                    let shade = spec.ambient + (1.0 - spec.ambient) * diffuse;
                    (t * len, spec.primitives[i].material().color_at(p).map(|a| a * shade))
                }
                _ => (far, spec.sky(dir)),
            };
            depth[v * w + u] = d as f32 as f64;
            image.set_pixel(u, v, rgb);
        }
    }
    image.quantize();
    Scene { camera: *camera, depth: DepthMap { width: w, height: h, data: depth }, image }
}

fn random_color(rng: &mut impl Rng) -> V3 {
    let hue = rng.random_range(0.0..6.0);
    let x = 1.0 - (hue % 2.0 - 1.0f64).abs();
    let rgb = match hue as usize {
        0 => [1.0, x, 0.0],
        1 => [x, 1.0, 0.0],
        2 => [0.0, 1.0, x],
        3 => [0.0, x, 1.0],
        4 => [x, 0.0, 1.0],
        _ => [1.0, 0.0, x],
    };
    let sat = rng.random_range(0.4..0.9);
    let val = rng.random_range(0.5..0.95);
    rgb.map(|c| val * (1.0 - sat + sat * c))
}

/// A random scene: a textured ground plane below the camera plus
/// `complexity` spheres and boxes resting on it.
pub fn generate_scene(seed: u64, camera: &Camera, complexity: usize, far: f64) -> Scene {
    render(&random_spec(seed, camera, complexity), camera, far)
}

pub(crate) fn random_spec(seed: u64, camera: &Camera, complexity: usize) -> SceneSpec {
    let mut rng = crate::rng(seed, 0x5c);
    let height = rng.random_range(1.3..1.8);
    let pitch = rng.random_range(0.05..0.2);
    let ground = Primitive::Plane {
        normal: [0.0, -1.0, 0.0],
        offset: -height,
        material: Material { albedo: random_color(&mut rng).map(|c| 0.4 + 0.5 * c), checker: Some(1.0) },
    };
    let mut primitives = vec![ground];
    // Half-width of the horizontal field of view at unit depth.
    let spread = camera.width as f64 / (2.0 * camera.fx);
    for _ in 0..complexity {
        let z = rng.random_range(2.5..14.0);
        let x = rng.random_range(-0.9..0.9) * spread * z;
        let material = Material::plain(random_color(&mut rng));
        if rng.random_bool(0.5) {
            let r = rng.random_range(0.3..1.0);
            primitives.push(Primitive::Sphere { center: [x, height - r, z], radius: r, material });
        } else {
            let (sx, sy, sz) = (rng.random_range(0.4..1.6), rng.random_range(0.4..2.2), rng.random_range(0.4..1.6));
            primitives.push(Primitive::Cuboid {
                min: [x - sx / 2.0, height - sy, z - sz / 2.0],
                max: [x + sx / 2.0, height, z + sz / 2.0],
                material,
            });
        }
    }
    let az: f64 = rng.random_range(-1.0..1.0);
    let light = unit([az, -1.6, -0.6]);
    SceneSpec { pitch, primitives, light, ambient: 0.35 }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam(w: usize, h: usize, f: f64) -> Camera {
        Camera::new(f, f, (w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, w, h).unwrap()
    }

    fn only(primitives: Vec<Primitive>) -> SceneSpec {
        SceneSpec { pitch: 0.0, primitives, light: unit([0.3, -1.0, -0.5]), ambient: 0.3 }
    }

    #[test]
    fn fronto_parallel_plane_at_principal_point() {
        let c = cam(9, 7, 10.0);
        let z0 = 4.25;
        let wall = Primitive::Plane { normal: [0.0, 0.0, 1.0], offset: z0, material: Material::plain([0.5; 3]) };
        let s = render(&only(vec![wall]), &c, 200.0);
        assert_eq!(s.depth.get(4, 3), z0);
        // Off-axis pixels are farther along their rays.
        let r = c.ray_unchecked(0.0, 0.0);
        let expected = z0 * norm(r);
        assert!((s.depth.get(0, 0) - expected).abs() < 1e-5 * expected);
    }

    #[test]
    fn sphere_on_axis() {
        let c = cam(9, 7, 10.0);
        let (z, r) = (6.0, 1.5);
        let ball = Primitive::Sphere { center: [0.0, 0.0, z], radius: r, material: Material::plain([0.8; 3]) };
        let s = render(&only(vec![ball]), &c, 200.0);
        assert_eq!(s.depth.get(4, 3), (z - r) as f32 as f64);
    }

    #[test]
    fn box_face_and_sky() {
        let c = cam(9, 7, 10.0);
        let b = Primitive::Cuboid { min: [-1.0, -1.0, 3.0], max: [1.0, 1.0, 5.0], material: Material::plain([0.2; 3]) };
        let s = render(&only(vec![b]), &c, 50.0);
        assert_eq!(s.depth.get(4, 3), 3.0);
        // Nothing behind the box: corner rays miss and read the far clip.
        let small = render(
            &only(vec![Primitive::Cuboid {
                min: [-0.1, -0.1, 3.0],
                max: [0.1, 0.1, 3.2],
                material: Material::plain([0.2; 3]),
            }]),
            &c,
            50.0,
        );
        assert_eq!(small.depth.get(0, 0), 50.0);
    }

    #[test]
    fn far_hits_are_clipped() {
        let c = cam(5, 5, 5.0);
        let wall = Primitive::Plane { normal: [0.0, 0.0, 1.0], offset: 500.0, material: Material::plain([0.5; 3]) };
        let s = render(&only(vec![wall]), &c, 200.0);
        assert!(s.depth.data.iter().all(|&d| d == 200.0));
    }

    #[test]
    fn generation_is_deterministic_and_valid() {
        let c = cam(32, 24, 30.0);
        let a = generate_scene(11, &c, 4, 200.0);
        let b = generate_scene(11, &c, 4, 200.0);
        assert_eq!(a, b);
        assert_ne!(a, generate_scene(12, &c, 4, 200.0));
        assert!(a.depth.data.iter().all(|&d| d > 0.0 && d <= 200.0));
        assert!(a.image.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        // Ground below the horizon is closer than the far clip.
        assert!(a.depth.get(16, 23) < 20.0);
    }

    #[test]
    fn ground_only_depth_is_geometric() {
        let c = cam(16, 12, 14.0);
        let spec = random_spec(5, &c, 0);
        let s = render(&spec, &c, 200.0);
        let Primitive::Plane { offset, .. } = spec.primitives[0] else { panic!() };
        let h = -offset;
        for v in 0..12 {
            for u in 0..16 {
                let dir = spec.to_world(c.ray_unchecked(u as f64, v as f64));
                if dir[1] <= 0.0 {
                    continue;
                }
                let d = h / dir[1] * norm(dir);
                if d < 200.0 {
                    assert!((s.depth.get(u, v) - d).abs() <= 1e-6 * d);
                }
            }
        }
    }
}

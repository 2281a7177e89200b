//! Rigid transforms stored as translation plus unit quaternion (w-first).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl From<[f64; 4]> for Quat {
    fn from(q: [f64; 4]) -> Self {
        Quat { w: q[0], x: q[1], y: q[2], z: q[3] }
    }
}

impl From<Quat> for [f64; 4] {
    fn from(q: Quat) -> Self {
        [q.w, q.x, q.y, q.z]
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Quat {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        assert!(n > 0.0, "rotation axis must be nonzero");
        let (s, c) = ((angle / 2.0).sin(), (angle / 2.0).cos());
        Quat { w: c, x: s * axis[0] / n, y: s * axis[1] / n, z: s * axis[2] / n }
    }

    pub fn mul(self, r: Quat) -> Quat {
        Quat {
            w: self.w * r.w - self.x * r.x - self.y * r.y - self.z * r.z,
            x: self.w * r.x + self.x * r.w + self.y * r.z - self.z * r.y,
            y: self.w * r.y - self.x * r.z + self.y * r.w + self.z * r.x,
            z: self.w * r.z + self.x * r.y - self.y * r.x + self.z * r.w,
        }
    }

    pub fn rotate(self, v: [f64; 3]) -> [f64; 3] {
        // v' = v + 2 u x (u x v + w v), u = vector part
        let u = [self.x, self.y, self.z];
        let c1 = cross(u, [v[0] + 0.0, v[1], v[2]]);
        let c1 = [c1[0] + self.w * v[0], c1[1] + self.w * v[1], c1[2] + self.w * v[2]];
        let c2 = cross(u, c1);
        [v[0] + 2.0 * c2[0], v[1] + 2.0 * c2[1], v[2] + 2.0 * c2[2]]
    }

    pub fn norm(self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(self) -> Quat {
        let n = self.norm();
        Quat { w: self.w / n, x: self.x / n, y: self.y / n, z: self.z / n }
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub translation: [f64; 3],
    pub rotation: Quat,
}

impl Transform {
    pub const IDENTITY: Transform = Transform { translation: [0.0; 3], rotation: Quat::IDENTITY };

    pub fn from_translation(t: [f64; 3]) -> Transform {
        Transform { translation: t, rotation: Quat::IDENTITY }
    }

    /// self applied after `inner`: (self ∘ inner)(p) = self(inner(p)).
    pub fn compose(self, inner: Transform) -> Transform {
        let t = self.rotation.rotate(inner.translation);
        Transform {
            translation: [
                self.translation[0] + t[0],
                self.translation[1] + t[1],
                self.translation[2] + t[2],
            ],
            rotation: self.rotation.mul(inner.rotation),
        }
    }

    pub fn apply(self, p: [f64; 3]) -> [f64; 3] {
        let r = self.rotation.rotate(p);
        [
            self.translation[0] + r[0],
            self.translation[1] + r[1],
            self.translation[2] + r[2],
        ]
    }

    /// Rotation part only; for directions and normals.
    pub fn rotate(self, v: [f64; 3]) -> [f64; 3] {
        self.rotation.rotate(v)
    }
}

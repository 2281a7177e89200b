//! Sensorized-hand description: 18 sensing pads totalling 368 taxels on a
//! 4-finger kinematic chain with 16 revolute joints, plus forward
//! kinematics mapping joint angles to per-taxel 3D positions.

use crate::error::{Result, SimError};
use crate::transform::{Quat, Transform};
use serde::{Deserialize, Serialize};

pub const TAXEL_COUNT: usize = 368;
pub const JOINT_COUNT: usize = 16;
pub const PAD_COUNT: usize = 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PadType {
    Fingertip,
    Phalange,
    Palm,
}

impl PadType {
    pub fn index(self) -> usize {
        match self {
            PadType::Fingertip => 0,
            PadType::Phalange => 1,
            PadType::Palm => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointType {
    Revolute,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub id: usize,
    pub parent: Option<usize>,
    pub joint_axis: [f64; 3],
    pub joint_type: JointType,
    pub offset: Transform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PadSpec {
    pub pad_id: usize,
    pub pad_type: PadType,
    pub local_taxel_offsets: Vec<[f64; 3]>,
    pub mount_link: usize,
    pub mount_transform: Transform,
}

impl PadSpec {
    pub fn taxel_count(&self) -> usize {
        self.local_taxel_offsets.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandLayout {
    pub links: Vec<LinkSpec>,
    pub pads: Vec<PadSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub angles: Vec<f64>,
}

impl JointState {
    pub fn zeros(n: usize) -> JointState {
        JointState { angles: vec![0.0; n] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaxelPositions {
    pub positions: Vec<[f64; 3]>,
}

impl HandLayout {
    pub fn taxel_count(&self) -> usize {
        self.pads.iter().map(PadSpec::taxel_count).sum()
    }

    pub fn joint_count(&self) -> usize {
        self.links.iter().filter(|l| l.joint_type == JointType::Revolute).count()
    }

    /// Pad type of each taxel, in enumeration order (pads by list order,
    /// offsets within a pad by list order).
    pub fn taxel_pad_types(&self) -> Vec<PadType> {
        let mut out = Vec::with_capacity(self.taxel_count());
        for pad in &self.pads {
            out.extend(std::iter::repeat(pad.pad_type).take(pad.taxel_count()));
        }
        out
    }

    /// Joint index consumed by each link, in link order; fixed links get none.
    fn joint_indices(&self) -> Vec<Option<usize>> {
        let mut next = 0;
        self.links
            .iter()
            .map(|l| match l.joint_type {
                JointType::Revolute => {
                    let j = next;
                    next += 1;
                    Some(j)
                }
                JointType::Fixed => None,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, link) in self.links.iter().enumerate() {
            if link.id != i {
                return Err(SimError::InvalidInput(format!(
                    "link ids must be dense and ordered, found {} at {}",
                    link.id, i
                )));
            }
            match link.parent {
                None if i != 0 => {
                    return Err(SimError::InvalidInput(format!("link {i} has no parent")))
                }
                Some(p) if p >= i => {
                    return Err(SimError::InvalidInput(format!(
                        "link {i} parent {p} must precede it"
                    )))
                }
                _ => {}
            }
            let a = link.joint_axis;
            let n2 = a[0] * a[0] + a[1] * a[1] + a[2] * a[2];
            if link.joint_type == JointType::Revolute && n2 == 0.0 {
                return Err(SimError::InvalidInput(format!("link {i} has zero joint axis")));
            }
        }
        for (i, pad) in self.pads.iter().enumerate() {
            if pad.pad_id != i {
                return Err(SimError::InvalidInput(format!(
                    "pad ids must be dense and ordered, found {} at {}",
                    pad.pad_id, i
                )));
            }
            if pad.mount_link >= self.links.len() {
                return Err(SimError::InvalidInput(format!(
                    "pad {i} mounts on unknown link {}",
                    pad.mount_link
                )));
            }
            for (a, oa) in pad.local_taxel_offsets.iter().enumerate() {
                for ob in &pad.local_taxel_offsets[a + 1..] {
                    if oa == ob {
                        return Err(SimError::InvalidInput(format!(
                            "pad {i} has duplicate taxel offsets"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Taxel positions at the all-zero joint configuration.
    pub fn rest_positions(&self) -> TaxelPositions {
        forward_kinematics(self, &JointState::zeros(self.joint_count()))
            .expect("zero joint state is always valid")
    }
}

/// World transform of every link for the given joint angles.
fn link_transforms(layout: &HandLayout, joints: &JointState) -> Vec<Transform> {
    let joint_idx = layout.joint_indices();
    let mut world: Vec<Transform> = Vec::with_capacity(layout.links.len());
    for link in &layout.links {
        let mut local = link.offset;
        if let Some(j) = joint_idx[link.id] {
            let rot = Transform {
                translation: [0.0; 3],
                rotation: Quat::from_axis_angle(link.joint_axis, joints.angles[j]),
            };
            local = local.compose(rot);
        }
        let base = link.parent.map_or(Transform::IDENTITY, |p| world[p]);
        world.push(base.compose(local));
    }
    world
}

pub fn forward_kinematics(layout: &HandLayout, joints: &JointState) -> Result<TaxelPositions> {
    if joints.angles.len() != layout.joint_count() {
        return Err(SimError::InvalidInput(format!(
            "expected {} joint angles, got {}",
            layout.joint_count(),
            joints.angles.len()
        )));
    }
    if !joints.angles.iter().all(|a| a.is_finite()) {
        return Err(SimError::InvalidInput("non-finite joint angle".into()));
    }
    let world = link_transforms(layout, joints);
    let mut positions = Vec::with_capacity(layout.taxel_count());
    for pad in &layout.pads {
        let mount = world[pad.mount_link].compose(pad.mount_transform);
        for &off in &pad.local_taxel_offsets {
            positions.push(mount.apply(off));
        }
    }
    Ok(TaxelPositions { positions })
}

/// Positions and outward unit surface normals of every taxel in one pass.
/// Flat pads point along the pad frame +z; fingertip taxels point
/// radially out of the cylinder their offsets lie on.
pub fn taxel_frames(
    layout: &HandLayout,
    joints: &JointState,
) -> Result<(TaxelPositions, Vec<[f64; 3]>)> {
    if joints.angles.len() != layout.joint_count() {
        return Err(SimError::InvalidInput(format!(
            "expected {} joint angles, got {}",
            layout.joint_count(),
            joints.angles.len()
        )));
    }
    if !joints.angles.iter().all(|a| a.is_finite()) {
        return Err(SimError::InvalidInput("non-finite joint angle".into()));
    }
    let world = link_transforms(layout, joints);
    let mut positions = Vec::with_capacity(layout.taxel_count());
    let mut normals = Vec::with_capacity(layout.taxel_count());
    for pad in &layout.pads {
        let mount = world[pad.mount_link].compose(pad.mount_transform);
        for &off in &pad.local_taxel_offsets {
            positions.push(mount.apply(off));
            let local = match pad.pad_type {
                PadType::Fingertip => {
                    let r = (off[0] * off[0] + off[2] * off[2]).sqrt();
                    [off[0] / r, 0.0, off[2] / r]
                }
                PadType::Phalange | PadType::Palm => [0.0, 0.0, 1.0],
            };
            normals.push(mount.rotate(local));
        }
    }
    Ok((TaxelPositions { positions }, normals))
}

/// Outward unit surface normal of every taxel, in the hand base frame.
pub fn taxel_normals(layout: &HandLayout, joints: &JointState) -> Result<Vec<[f64; 3]>> {
    taxel_frames(layout, joints).map(|(_, n)| n)
}

/// Canonical flat-open configuration used when capturing the baseline frame.
pub fn rest_baseline_config() -> JointState {
    JointState::zeros(JOINT_COUNT)
}

// Default geometry, meters. Fingers sit side by side along x at the palm's
// front edge and extend along +y; the palm sensing surface faces +z.
const FINGER_SPACING: f64 = 0.022;
const FINGER_BASE_Y: f64 = 0.05;
const LEN_METACARPAL: f64 = 0.02;
const LEN_PROXIMAL: f64 = 0.045;
const LEN_MIDDLE: f64 = 0.03;
const FINGERTIP_RADIUS: f64 = 0.01;
const PHALANGE_SPACING: f64 = 0.004;
const PALM_SPACING: f64 = 0.006;
const PHALANGE_SURFACE_Z: f64 = 0.008;
const PALM_SURFACE_Z: f64 = 0.002;

fn grid_offsets(rows: usize, cols: usize, spacing: f64) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out.push([
                (c as f64 - (cols as f64 - 1.0) / 2.0) * spacing,
                (r as f64 - (rows as f64 - 1.0) / 2.0) * spacing,
                0.0,
            ]);
        }
    }
    out
}

fn fingertip_offsets() -> Vec<[f64; 3]> {
    // 5 axial stations x 6 angles on the upper half of a cylinder whose
    // axis runs along the finger (+y).
    let stations = [0.002, 0.0065, 0.011, 0.0155, 0.02];
    let angles_deg = [-75.0, -45.0, -15.0, 15.0, 45.0, 75.0];
    let mut out = Vec::with_capacity(30);
    for &y in &stations {
        for &a in &angles_deg {
            let t = a * std::f64::consts::PI / 180.0;
            out.push([FINGERTIP_RADIUS * t.sin(), y, FINGERTIP_RADIUS * t.cos()]);
        }
    }
    out
}

/// Fixed deterministic layout: 4 fingertip pads (30 taxels each), 11
/// phalange pads (4x4), 3 palm pads (4x6 at 6 mm pitch); 368 taxels total.
pub fn build_default_layout() -> HandLayout {
    let mut links = vec![LinkSpec {
        id: 0,
        parent: None,
        joint_axis: [0.0, 0.0, 1.0],
        joint_type: JointType::Fixed,
        offset: Transform::IDENTITY,
    }];
    for f in 0..4 {
        let base_x = (f as f64 - 1.5) * FINGER_SPACING;
        let abduction = LinkSpec {
            id: 4 * f + 1,
            parent: Some(0),
            joint_axis: [0.0, 0.0, 1.0],
            joint_type: JointType::Revolute,
            offset: Transform::from_translation([base_x, FINGER_BASE_Y, 0.0]),
        };
        let knuckle = LinkSpec {
            id: 4 * f + 2,
            parent: Some(4 * f + 1),
            joint_axis: [1.0, 0.0, 0.0],
            joint_type: JointType::Revolute,
            offset: Transform::from_translation([0.0, LEN_METACARPAL, 0.0]),
        };
        let middle = LinkSpec {
            id: 4 * f + 3,
            parent: Some(4 * f + 2),
            joint_axis: [1.0, 0.0, 0.0],
            joint_type: JointType::Revolute,
            offset: Transform::from_translation([0.0, LEN_PROXIMAL, 0.0]),
        };
        let distal = LinkSpec {
            id: 4 * f + 4,
            parent: Some(4 * f + 3),
            joint_axis: [1.0, 0.0, 0.0],
            joint_type: JointType::Revolute,
            offset: Transform::from_translation([0.0, LEN_MIDDLE, 0.0]),
        };
        links.extend([abduction, knuckle, middle, distal]);
    }

    let mut pads = Vec::with_capacity(PAD_COUNT);
    for f in 0..4 {
        pads.push(PadSpec {
            pad_id: f,
            pad_type: PadType::Fingertip,
            local_taxel_offsets: fingertip_offsets(),
            mount_link: 4 * f + 4,
            mount_transform: Transform::IDENTITY,
        });
    }
    // Fingers 0..2 carry phalange pads on all three segments before the
    // tip; finger 3 carries two, for 11 pads total.
    let mut pad_id = 4;
    for f in 0..4 {
        let segments: &[(usize, f64)] = if f < 3 {
            &[
                (4 * f + 1, LEN_METACARPAL / 2.0),
                (4 * f + 2, LEN_PROXIMAL / 2.0),
                (4 * f + 3, LEN_MIDDLE / 2.0),
            ]
        } else {
            &[(4 * f + 2, LEN_PROXIMAL / 2.0), (4 * f + 3, LEN_MIDDLE / 2.0)]
        };
        for &(link, y_center) in segments {
            pads.push(PadSpec {
                pad_id,
                pad_type: PadType::Phalange,
                local_taxel_offsets: grid_offsets(4, 4, PHALANGE_SPACING),
                mount_link: link,
                mount_transform: Transform::from_translation([0.0, y_center, PHALANGE_SURFACE_Z]),
            });
            pad_id += 1;
        }
    }
    for (i, &x) in [-0.027, 0.0, 0.027].iter().enumerate() {
        pads.push(PadSpec {
            pad_id: 15 + i,
            pad_type: PadType::Palm,
            local_taxel_offsets: grid_offsets(6, 4, PALM_SPACING),
            mount_link: 0,
            mount_transform: Transform::from_translation([x, 0.025, PALM_SURFACE_Z]),
        });
    }

    let layout = HandLayout { links, pads };
    layout.validate().expect("default layout is valid");
    layout
}

// JSON layout file. Pads may give explicit offsets or a rows/cols grid
// with a spacing in meters.
#[derive(Serialize, Deserialize)]
struct PadFile {
    pad_id: usize,
    #[serde(rename = "type")]
    pad_type: PadType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cols: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spacing: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    offsets: Option<Vec<[f64; 3]>>,
    mount_link: usize,
    mount_transform: Transform,
}

#[derive(Serialize, Deserialize)]
struct LayoutFile {
    links: Vec<LinkSpec>,
    pads: Vec<PadFile>,
}

impl HandLayout {
    pub fn to_json_string(&self) -> String {
        let file = LayoutFile {
            links: self.links.clone(),
            pads: self
                .pads
                .iter()
                .map(|p| PadFile {
                    pad_id: p.pad_id,
                    pad_type: p.pad_type,
                    rows: None,
                    cols: None,
                    spacing: None,
                    offsets: Some(p.local_taxel_offsets.clone()),
                    mount_link: p.mount_link,
                    mount_transform: p.mount_transform,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("layout serializes")
    }

    pub fn from_json_str(s: &str) -> Result<HandLayout> {
        let file: LayoutFile = serde_json::from_str(s)?;
        let mut pads = Vec::with_capacity(file.pads.len());
        for p in file.pads {
            let offsets = match (p.offsets, p.rows, p.cols) {
                (Some(o), None, None) => o,
                (None, Some(r), Some(c)) => {
                    let spacing = p.spacing.ok_or_else(|| {
                        SimError::InvalidInput(format!("pad {} grid needs a spacing", p.pad_id))
                    })?;
                    grid_offsets(r, c, spacing)
                }
                _ => {
                    return Err(SimError::InvalidInput(format!(
                        "pad {} must give either offsets or rows+cols",
                        p.pad_id
                    )))
                }
            };
            pads.push(PadSpec {
                pad_id: p.pad_id,
                pad_type: p.pad_type,
                local_taxel_offsets: offsets,
                mount_link: p.mount_link,
                mount_transform: p.mount_transform,
            });
        }
        let layout = HandLayout { links: file.links, pads };
        layout.validate()?;
        Ok(layout)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout_counts() {
        let layout = build_default_layout();
        assert_eq!(layout.taxel_count(), TAXEL_COUNT);
        assert_eq!(layout.joint_count(), JOINT_COUNT);
        assert_eq!(layout.pads.len(), PAD_COUNT);
        let by_type = |t: PadType| {
            layout
                .pads
                .iter()
                .filter(|p| p.pad_type == t)
                .map(PadSpec::taxel_count)
                .sum::<usize>()
        };
        assert_eq!(by_type(PadType::Fingertip), 120);
        assert_eq!(by_type(PadType::Phalange), 176);
        assert_eq!(by_type(PadType::Palm), 72);
        assert_eq!(layout.pads.iter().filter(|p| p.pad_type == PadType::Fingertip).count(), 4);
        assert_eq!(layout.pads.iter().filter(|p| p.pad_type == PadType::Phalange).count(), 11);
        let palm: Vec<_> = layout.pads.iter().filter(|p| p.pad_type == PadType::Palm).collect();
        assert_eq!(palm.len(), 3);
        assert!(palm.iter().all(|p| p.mount_link == 0));
        assert_eq!(layout.taxel_pad_types().len(), TAXEL_COUNT);
    }

    #[test]
    fn rest_config_is_all_zero_and_stable() {
        let a = rest_baseline_config();
        let b = rest_baseline_config();
        assert_eq!(a, b);
        assert!(a.angles.iter().all(|&x| x == 0.0));
        assert_eq!(a.angles.len(), JOINT_COUNT);

        let layout = build_default_layout();
        let fk = forward_kinematics(&layout, &a).unwrap();
        assert_eq!(fk, layout.rest_positions());
    }

    #[test]
    fn palm_taxels_ignore_finger_joints() {
        let layout = build_default_layout();
        let rest = forward_kinematics(&layout, &rest_baseline_config()).unwrap();
        let palm_start = TAXEL_COUNT - 72;
        for j in 0..JOINT_COUNT {
            let mut q = rest_baseline_config();
            q.angles[j] = 0.8;
            let moved = forward_kinematics(&layout, &q).unwrap();
            assert_eq!(
                &moved.positions[palm_start..],
                &rest.positions[palm_start..],
                "palm moved under joint {j}"
            );
        }
    }

    #[test]
    fn other_fingers_ignore_a_perturbed_finger() {
        let layout = build_default_layout();
        let types = layout.taxel_pad_types();
        let mut owner = vec![usize::MAX; TAXEL_COUNT];
        let mut t = 0;
        for pad in &layout.pads {
            let finger = match pad.mount_link {
                0 => usize::MAX,
                l => (l - 1) / 4,
            };
            for _ in 0..pad.taxel_count() {
                owner[t] = finger;
                t += 1;
            }
        }
        assert_eq!(types.len(), owner.len());

        let base = JointState { angles: (0..16).map(|i| 0.05 * i as f64 - 0.3).collect() };
        let ref_pos = forward_kinematics(&layout, &base).unwrap();
        for f in 0..4 {
            let mut q = base.clone();
            for j in 0..4 {
                q.angles[4 * f + j] += 0.4;
            }
            let moved = forward_kinematics(&layout, &q).unwrap();
            for i in 0..TAXEL_COUNT {
                if owner[i] != f {
                    assert_eq!(moved.positions[i], ref_pos.positions[i], "taxel {i}");
                } else {
                    assert_ne!(moved.positions[i], ref_pos.positions[i], "taxel {i}");
                }
            }
        }
    }

    // Independent oracle: compose homogeneous 4x4 matrices by hand for
    // finger 1 with its knuckle joint at pi/2 and check a fingertip taxel.
    #[test]
    fn fk_matches_manual_homogeneous_composition() {
        let layout = build_default_layout();
        let mut q = rest_baseline_config();
        q.angles[5] = std::f64::consts::FRAC_PI_2; // finger 1 knuckle flexion
        let fk = forward_kinematics(&layout, &q).unwrap();

        fn matmul(a: [[f64; 4]; 4], b: [[f64; 4]; 4]) -> [[f64; 4]; 4] {
            let mut c = [[0.0; 4]; 4];
            for i in 0..4 {
                for j in 0..4 {
                    for k in 0..4 {
                        c[i][j] += a[i][k] * b[k][j];
                    }
                }
            }
            c
        }
        fn translate(t: [f64; 3]) -> [[f64; 4]; 4] {
            [
                [1.0, 0.0, 0.0, t[0]],
                [0.0, 1.0, 0.0, t[1]],
                [0.0, 0.0, 1.0, t[2]],
                [0.0, 0.0, 0.0, 1.0],
            ]
        }
        fn rot_x(a: f64) -> [[f64; 4]; 4] {
            let (s, c) = (a.sin(), a.cos());
            [
                [1.0, 0.0, 0.0, 0.0],
                [0.0, c, -s, 0.0],
                [0.0, s, c, 0.0],
                [0.0, 0.0, 0.0, 1.0],
            ]
        }

        let finger = 1;
        let base_x = (finger as f64 - 1.5) * FINGER_SPACING;
        let mut m = translate([base_x, FINGER_BASE_Y, 0.0]); // abduction at 0
        m = matmul(m, matmul(translate([0.0, LEN_METACARPAL, 0.0]), rot_x(q.angles[5])));
        m = matmul(m, translate([0.0, LEN_PROXIMAL, 0.0]));
        m = matmul(m, translate([0.0, LEN_MIDDLE, 0.0]));

        // First fingertip taxel of pad 1 (taxel id 30) at local offset.
        let off = fingertip_offsets()[0];
        let expect = [
            m[0][0] * off[0] + m[0][1] * off[1] + m[0][2] * off[2] + m[0][3],
            m[1][0] * off[0] + m[1][1] * off[1] + m[1][2] * off[2] + m[1][3],
            m[2][0] * off[0] + m[2][1] * off[1] + m[2][2] * off[2] + m[2][3],
        ];
        let got = fk.positions[30];
        for i in 0..3 {
            assert!((got[i] - expect[i]).abs() <= 1e-9, "{got:?} vs {expect:?}");
        }
    }

    #[test]
    fn fk_is_continuous_in_every_joint() {
        let layout = build_default_layout();
        let q0 = JointState { angles: (0..16).map(|i| 0.1 * (i as f64).sin()).collect() };
        let p0 = forward_kinematics(&layout, &q0).unwrap();
        for j in 0..JOINT_COUNT {
            let mut q = q0.clone();
            q.angles[j] += 1e-6;
            let p1 = forward_kinematics(&layout, &q).unwrap();
            let max_move = p0
                .positions
                .iter()
                .zip(&p1.positions)
                .map(|(a, b)| {
                    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
                })
                .fold(0.0, f64::max);
            assert!(max_move < 1e-4, "joint {j} moved {max_move}");
        }
    }

    #[test]
    fn fingertip_normals_are_radial_and_unit() {
        let layout = build_default_layout();
        let normals = taxel_normals(&layout, &rest_baseline_config()).unwrap();
        assert_eq!(normals.len(), TAXEL_COUNT);
        for n in &normals {
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            assert!((len - 1.0).abs() < 1e-12);
        }
        // Palm taxels all face +z at rest.
        for n in &normals[TAXEL_COUNT - 72..] {
            assert_eq!(*n, [0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn wrong_joint_count_is_rejected() {
        let layout = build_default_layout();
        let err = forward_kinematics(&layout, &JointState::zeros(3));
        assert!(matches!(err, Err(SimError::InvalidInput(_))));
    }

    #[test]
    fn json_round_trip_preserves_kinematics() {
        let layout = build_default_layout();
        let json = layout.to_json_string();
        let loaded = HandLayout::from_json_str(&json).unwrap();
        let q = JointState { angles: (0..16).map(|i| 0.07 * i as f64 - 0.4).collect() };
        let a = forward_kinematics(&layout, &q).unwrap();
        let b = forward_kinematics(&loaded, &q).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn json_grid_shorthand_expands() {
        let layout = build_default_layout();
        let mut v: serde_json::Value = serde_json::from_str(&layout.to_json_string()).unwrap();
        let palm = &mut v["pads"][15];
        palm["offsets"] = serde_json::Value::Null;
        palm.as_object_mut().unwrap().remove("offsets");
        palm["rows"] = 6.into();
        palm["cols"] = 4.into();
        palm["spacing"] = serde_json::json!(PALM_SPACING);
        let loaded = HandLayout::from_json_str(&v.to_string()).unwrap();
        assert_eq!(loaded.pads[15].local_taxel_offsets, layout.pads[15].local_taxel_offsets);
    }
}

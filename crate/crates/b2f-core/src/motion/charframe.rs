use crate::error::{Error, Result};

use super::types::{BodyContentFrame, BodyMotionSequence, JointState, KEY_JOINTS};

/// One joint as it comes out of a global-frame capture: position in meters
/// plus a rotation matrix stored as three columns (each column is one local
/// axis expressed in global coordinates).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawJoint {
    pub position: [f64; 3],
    pub rotation: [[f64; 3]; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawBodyFrame {
    /// Ordered per [`KEY_JOINTS`]; index 0 is the pelvis (root).
    pub joints: [RawJoint; 10],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawBodySequence {
    pub fps: f64,
    pub frames: Vec<RawBodyFrame>,
}

/// Re-express a global-frame recording in the per-frame character frame.
///
/// Per frame, the basis is built from the root's forward direction: the
/// pelvis rotation's local z-axis is projected onto the ground plane and
/// normalized; the basis columns are [forward, up (+Y), forward x up] and
/// the origin is the pelvis position projected onto the ground. Frames whose
/// projected forward is degenerate (near-vertical root) reuse the previous
/// frame's basis (identity at the start). Velocities are central differences
/// of the global positions (one-sided at the ends), rotated into the basis.
pub fn to_character_frame(raw: &RawBodySequence) -> Result<Vec<BodyContentFrame>> {
    if !(raw.fps > 0.0) {
        return Err(Error::invalid(format!("fps must be positive, got {}", raw.fps)));
    }
    let t_total = raw.frames.len();
    let mut out = Vec::with_capacity(t_total);
    let mut prev_basis = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for (t, frame) in raw.frames.iter().enumerate() {
        let pelvis = &frame.joints[0];
        let fwd_raw = pelvis.rotation[2]; // local z in global coords
        let flat = [fwd_raw[0], 0.0, fwd_raw[2]];
        let norm = (flat[0] * flat[0] + flat[2] * flat[2]).sqrt();
        let basis = if norm < 1e-6 {
            prev_basis
        } else {
            let f = [flat[0] / norm, 0.0, flat[2] / norm];
            let up = [0.0, 1.0, 0.0];
            [f, up, cross(f, up)]
        };
        prev_basis = basis;
        let origin = [pelvis.position[0], 0.0, pelvis.position[2]];

        let mut joints = [JointState {
            position: [0.0; 3],
            rotation6d: [0.0; 6],
            velocity: [0.0; 3],
        }; 10];
        for (j, js) in joints.iter_mut().enumerate() {
            let rj = &frame.joints[j];
            js.position = into_basis(&basis, sub(rj.position, origin));
            let c0 = into_basis(&basis, rj.rotation[0]);
            let c1 = into_basis(&basis, rj.rotation[1]);
            js.rotation6d = [c0[0], c0[1], c0[2], c1[0], c1[1], c1[2]];
            let v_global = global_velocity(raw, t, j);
            js.velocity = into_basis(&basis, v_global);
        }
        out.push(BodyContentFrame { joints });
    }
    Ok(out)
}

/// [`to_character_frame`] flattened into a 120-dim-per-frame sequence.
pub fn character_frame_sequence(raw: &RawBodySequence) -> Result<BodyMotionSequence> {
    let frames = to_character_frame(raw)?;
    BodyMotionSequence::new(
        raw.fps,
        KEY_JOINTS.len() * 12,
        frames.iter().map(|f| f.flatten()).collect(),
    )
}

fn global_velocity(raw: &RawBodySequence, t: usize, joint: usize) -> [f64; 3] {
    let n = raw.frames.len();
    let p = |i: usize| raw.frames[i].joints[joint].position;
    if n < 2 {
        return [0.0; 3];
    }
    let (a, b, dt) = if t == 0 {
        (p(0), p(1), 1.0)
    } else if t == n - 1 {
        (p(n - 2), p(n - 1), 1.0)
    } else {
        (p(t - 1), p(t + 1), 2.0)
    };
    let scale = raw.fps / dt;
    [
        (b[0] - a[0]) * scale,
        (b[1] - a[1]) * scale,
        (b[2] - a[2]) * scale,
    ]
}

/// Coordinates of `v` in the orthonormal basis given by columns.
fn into_basis(basis: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [dot3(basis[0], v), dot3(basis[1], v), dot3(basis[2], v)]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::RngState;

    const IDENT: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    fn yaw(theta: f64) -> [[f64; 3]; 3] {
        // Columns of a rotation about +Y.
        let (s, c) = theta.sin_cos();
        [[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]]
    }

    fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
        // Column-major: result column j = a applied to b's column j.
        let apply = |v: [f64; 3]| {
            [
                a[0][0] * v[0] + a[1][0] * v[1] + a[2][0] * v[2],
                a[0][1] * v[0] + a[1][1] * v[1] + a[2][1] * v[2],
                a[0][2] * v[0] + a[1][2] * v[1] + a[2][2] * v[2],
            ]
        };
        [apply(b[0]), apply(b[1]), apply(b[2])]
    }

    fn apply(a: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
        [
            a[0][0] * v[0] + a[1][0] * v[1] + a[2][0] * v[2],
            a[0][1] * v[0] + a[1][1] * v[1] + a[2][1] * v[2],
            a[0][2] * v[0] + a[1][2] * v[1] + a[2][2] * v[2],
        ]
    }

    fn random_sequence(seed: u64, len: usize) -> RawBodySequence {
        let mut rng = RngState::new(seed);
        let mut frames = Vec::new();
        for t in 0..len {
            let time = t as f64 / 30.0;
            let mut joints = [RawJoint { position: [0.0; 3], rotation: IDENT }; 10];
            for (j, joint) in joints.iter_mut().enumerate() {
                joint.position = [
                    (time * (1.0 + j as f64)).sin() * 0.3 + rng.uniform_in(-0.01, 0.01),
                    0.9 + 0.1 * (time * 2.0).cos(),
                    (time * 0.7).cos() * 0.2,
                ];
                joint.rotation = mat_mul(&yaw(0.3 * time + j as f64 * 0.1), &IDENT);
            }
            frames.push(RawBodyFrame { joints });
        }
        RawBodySequence { fps: 30.0, frames }
    }

    #[test]
    fn standing_at_origin_facing_forward_keeps_pelvis_height() {
        let mut joints = [RawJoint { position: [0.0; 3], rotation: IDENT }; 10];
        joints[0].position = [0.0, 0.92, 0.0];
        let raw = RawBodySequence {
            fps: 30.0,
            frames: vec![RawBodyFrame { joints }],
        };
        let frames = to_character_frame(&raw).unwrap();
        assert_eq!(frames[0].joints[0].position, [0.0, 0.92, 0.0]);
        // Basis axes are (forward, up, forward x up) = (z, y, -x), so the
        // identity rotation's x column reads [0, 0, -1] in character coords
        // and its z column (the facing direction) lands on axis 0.
        assert_eq!(frames[0].joints[0].rotation6d, [0.0, 0.0, -1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn invariant_under_horizontal_translation_and_yaw() {
        let base = random_sequence(9, 20);
        let reference = to_character_frame(&base).unwrap();

        // Rigid horizontal translation.
        let mut shifted = base.clone();
        for f in &mut shifted.frames {
            for j in &mut f.joints {
                j.position[0] += 13.7;
                j.position[2] -= 4.2;
            }
        }
        let got = to_character_frame(&shifted).unwrap();
        for (a, b) in reference.iter().zip(&got) {
            for (ja, jb) in a.joints.iter().zip(&b.joints) {
                for k in 0..3 {
                    assert!((ja.position[k] - jb.position[k]).abs() < 1e-9);
                    assert!((ja.velocity[k] - jb.velocity[k]).abs() < 1e-9);
                }
                for k in 0..6 {
                    assert!((ja.rotation6d[k] - jb.rotation6d[k]).abs() < 1e-9);
                }
            }
        }

        // Global yaw rotation of positions and rotations together.
        let r = yaw(1.234);
        let mut rotated = base.clone();
        for f in &mut rotated.frames {
            for j in &mut f.joints {
                j.position = apply(&r, j.position);
                j.rotation = mat_mul(&r, &j.rotation);
            }
        }
        let got = to_character_frame(&rotated).unwrap();
        for (a, b) in reference.iter().zip(&got) {
            for (ja, jb) in a.joints.iter().zip(&b.joints) {
                for k in 0..3 {
                    assert!((ja.position[k] - jb.position[k]).abs() < 1e-9);
                    assert!((ja.velocity[k] - jb.velocity[k]).abs() < 1e-9);
                }
                for k in 0..6 {
                    assert!((ja.rotation6d[k] - jb.rotation6d[k]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn constant_drift_shows_up_only_in_velocities() {
        let base = random_sequence(11, 15);
        let reference = to_character_frame(&base).unwrap();
        let drift = [0.8, 0.0, -0.5]; // meters per second, horizontal
        let mut drifted = base.clone();
        for (t, f) in drifted.frames.iter_mut().enumerate() {
            let dt = t as f64 / drifted.fps;
            for j in &mut f.joints {
                j.position[0] += drift[0] * dt;
                j.position[2] += drift[2] * dt;
            }
        }
        let got = to_character_frame(&drifted).unwrap();
        for (t, (a, b)) in reference.iter().zip(&got).enumerate() {
            // Basis at frame t, rebuilt the same way the transform does.
            let pelvis = &drifted.frames[t].joints[0];
            let fwd = pelvis.rotation[2];
            let n = (fwd[0] * fwd[0] + fwd[2] * fwd[2]).sqrt();
            let f = [fwd[0] / n, 0.0, fwd[2] / n];
            let basis = [f, [0.0, 1.0, 0.0], super::cross(f, [0.0, 1.0, 0.0])];
            let drift_local = super::into_basis(&basis, drift);
            for (ja, jb) in a.joints.iter().zip(&b.joints) {
                for k in 0..3 {
                    assert!((ja.position[k] - jb.position[k]).abs() < 1e-9, "position moved");
                    assert!(
                        (ja.velocity[k] + drift_local[k] - jb.velocity[k]).abs() < 1e-9,
                        "velocity delta is not the drift"
                    );
                }
            }
        }
    }

    #[test]
    fn degenerate_forward_reuses_previous_basis() {
        let mut seq = random_sequence(3, 3);
        // Frame 1's root looks straight up: local z maps to +Y.
        seq.frames[1].joints[0].rotation = [[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]];
        let frames = to_character_frame(&seq).unwrap();
        assert_eq!(frames.len(), 3);
        for f in &frames {
            for j in &f.joints {
                assert!(j.position.iter().all(|v| v.is_finite()));
                assert!(j.rotation6d.iter().all(|v| v.is_finite()));
            }
        }
    }

    #[test]
    fn velocity_of_linear_motion_is_exact() {
        // Walking along +x while facing +x: p(t) = (0.1 t, 1, 0) at 30 fps.
        // Every estimator branch (forward, central, backward) must report
        // exactly 3 m/s along the character's forward axis.
        let facing_x = yaw(std::f64::consts::FRAC_PI_2);
        let mut frames = Vec::new();
        for t in 0..5 {
            let mut joints = [RawJoint { position: [0.0; 3], rotation: facing_x }; 10];
            for j in joints.iter_mut() {
                j.position = [0.1 * t as f64, 1.0, 0.0];
            }
            frames.push(RawBodyFrame { joints });
        }
        let raw = RawBodySequence { fps: 30.0, frames };
        let out = to_character_frame(&raw).unwrap();
        for f in &out {
            assert!((f.joints[0].velocity[0] - 3.0).abs() < 1e-12);
            assert!(f.joints[0].velocity[1].abs() < 1e-12);
            assert!(f.joints[0].velocity[2].abs() < 1e-12);
        }
    }
}

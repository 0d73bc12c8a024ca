//! Joint layout and the rest-pose template.
//!
//! Joint order: wrist, then for thumb, index, middle, ring, little the
//! MCP, PIP, DIP and tip joints. Every other module indexes poses with
//! these constants.
//!
//! The template lives in the palm plane (z = 0) with fingers pointing
//! along +y from a wrist at the origin. Flexion curls fingers toward +z.
//! All lengths are millimeters.

pub const NUM_JOINTS: usize = 21;
pub const NUM_BONES: usize = 20;
pub const NUM_FINGERS: usize = 5;
pub const JOINTS_PER_FINGER: usize = 4;
pub const WRIST: usize = 0;

pub const FINGER_NAMES: [&str; NUM_FINGERS] = ["thumb", "index", "middle", "ring", "little"];

/// Joint index of the `k`-th joint (0 = MCP, 3 = tip) of finger `f`.
pub const fn joint(f: usize, k: usize) -> usize {
    1 + f * JOINTS_PER_FINGER + k
}

/// Parent of every joint; the wrist has none.
pub fn parent(j: usize) -> Option<usize> {
    match j {
        WRIST => None,
        _ if (j - 1) % JOINTS_PER_FINGER == 0 => Some(WRIST),
        _ => Some(j - 1),
    }
}

/// Finger of a joint, `None` for the wrist.
pub fn finger_of(j: usize) -> Option<usize> {
    (j != WRIST).then(|| (j - 1) / JOINTS_PER_FINGER)
}

/// `(child, parent)` for every bone, finger-major and proximal to distal.
/// Bone `i` ends at joint `i + 1`.
pub fn bones() -> [(usize, usize); NUM_BONES] {
    let mut out = [(0, 0); NUM_BONES];
    for (i, b) in out.iter_mut().enumerate() {
        let child = i + 1;
        *b = (child, parent(child).expect("non-root"));
    }
    out
}

/// Rest geometry of one finger.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FingerTemplate {
    /// Angle of the finger in the palm plane, radians from +y, positive
    /// toward +x.
    pub fan_angle: f64,
    /// Wrist to MCP distance.
    pub root_distance: f64,
    /// Proximal, middle and distal phalanx lengths.
    pub phalanges: [f64; 3],
}

impl FingerTemplate {
    /// Unit rest direction of the finger.
    pub fn direction(&self) -> [f64; 3] {
        [self.fan_angle.sin(), self.fan_angle.cos(), 0.0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonTemplate {
    pub fingers: [FingerTemplate; NUM_FINGERS],
}

impl Default for SkeletonTemplate {
    fn default() -> Self {
        let deg = std::f64::consts::PI / 180.0;
        let f = |angle: f64, root: f64, phalanges: [f64; 3]| FingerTemplate {
            fan_angle: angle * deg,
            root_distance: root,
            phalanges,
        };
        Self {
            fingers: [
                f(-40.0, 80.0, [32.0, 26.0, 20.0]),
                f(-20.0, 92.0, [42.0, 25.0, 20.0]),
                f(0.0, 95.0, [45.0, 28.0, 22.0]),
                f(20.0, 90.0, [40.0, 27.0, 21.0]),
                f(40.0, 82.0, [32.0, 21.0, 20.0]),
            ],
        }
    }
}

impl SkeletonTemplate {
    /// Rest offset of joint `j` from its parent.
    pub fn offset(&self, j: usize) -> [f64; 3] {
        let f = finger_of(j).expect("wrist has no offset");
        let ft = &self.fingers[f];
        let k = (j - 1) % JOINTS_PER_FINGER;
        let len = if k == 0 {
            ft.root_distance
        } else {
            ft.phalanges[k - 1]
        };
        ft.direction().map(|d| d * len)
    }

    /// Rest pose: every joint at its accumulated offset.
    pub fn rest_pose(&self) -> [[f64; 3]; NUM_JOINTS] {
        let mut out = [[0.0; 3]; NUM_JOINTS];
        for j in 1..NUM_JOINTS {
            let p = out[parent(j).expect("non-root")];
            let o = self.offset(j);
            out[j] = [p[0] + o[0], p[1] + o[1], p[2] + o[2]];
        }
        out
    }

    /// Rest length of bone `i` (ending at joint `i + 1`).
    pub fn bone_length(&self, i: usize) -> f64 {
        let o = self.offset(i + 1);
        (o[0] * o[0] + o[1] * o[1] + o[2] * o[2]).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tree_has_twenty_bones_and_five_chains() {
        let roots: Vec<_> = (0..NUM_JOINTS).filter(|&j| parent(j).is_none()).collect();
        assert_eq!(roots, vec![WRIST]);
        assert_eq!(bones().len(), NUM_BONES);
        for f in 0..NUM_FINGERS {
            assert_eq!(parent(joint(f, 0)), Some(WRIST));
            for k in 1..JOINTS_PER_FINGER {
                assert_eq!(parent(joint(f, k)), Some(joint(f, k - 1)));
                assert_eq!(finger_of(joint(f, k)), Some(f));
            }
        }
    }

    #[test]
    fn template_lengths_in_documented_ranges() {
        let t = SkeletonTemplate::default();
        for ft in &t.fingers {
            assert!((80.0..=95.0).contains(&ft.root_distance));
            assert!(ft.phalanges.iter().all(|l| (20.0..=45.0).contains(l)));
            assert!(ft.fan_angle.abs() <= 40f64.to_radians() + 1e-12);
        }
        let thumb: f64 = t.fingers[0].phalanges.iter().sum();
        let middle: f64 = t.fingers[2].phalanges.iter().sum();
        assert!(thumb < middle);
    }
}

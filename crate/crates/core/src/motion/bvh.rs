//! BVH reader and writer.
//!
//! Only the root may carry position channels. Rotation channels may use any
//! of the six Euler orders; angles are degrees. On write, numbers use six
//! decimal places.

use std::fmt::Write as _;

use nalgebra::Vector3;

use super::{
    contact_labels, euler_to_matrix, matrix_to_euler, matrix_to_rot6d, EndSite, EulerOrder, Joint, Motion,
    MotionError, Skeleton,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Default)]
pub struct BvhOptions {
    /// Joint names carrying contact labels; guessed from the rest pose when
    /// absent.
    pub foot_joints: Option<Vec<String>>,
    /// Contact speed threshold in length units per frame; defaults to
    /// [`Skeleton::default_contact_threshold`].
    pub contact_threshold: Option<f64>,
}

pub fn parse_bvh(text: &str) -> Result<(Skeleton, Motion), MotionError> {
    parse_bvh_with(text, &BvhOptions::default())
}

#[derive(Debug, Clone, Copy)]
enum Channel {
    Pos(usize),
    Rot(usize),
}

struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let items = text
            .lines()
            .enumerate()
            .flat_map(|(n, l)| l.split_whitespace().map(move |w| (n + 1, w)))
            .collect();
        Self { items, pos: 0 }
    }

    fn line(&self) -> usize {
        self.items
            .get(self.pos)
            .or(self.items.last())
            .map_or(0, |&(n, _)| n)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, MotionError> {
        Err(MotionError::Bvh {
            line: self.line(),
            msg: msg.into(),
        })
    }

    fn peek(&self) -> Option<&'a str> {
        self.items.get(self.pos).map(|&(_, w)| w)
    }

    fn next(&mut self) -> Result<&'a str, MotionError> {
        match self.items.get(self.pos) {
            Some(&(_, w)) => {
                self.pos += 1;
                Ok(w)
            }
            None => self.err("unexpected end of file"),
        }
    }

    fn expect(&mut self, word: &str) -> Result<(), MotionError> {
        let w = self.next()?;
        if !w.eq_ignore_ascii_case(word) {
            self.pos -= 1;
            return self.err(format!("expected `{word}`, found `{w}`"));
        }
        Ok(())
    }

    fn number(&mut self) -> Result<f64, MotionError> {
        let w = self.next()?;
        match w.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => {
                self.pos -= 1;
                self.err(format!("expected a number, found `{w}`"))
            }
        }
    }

    fn count(&mut self) -> Result<usize, MotionError> {
        let w = self.next()?;
        w.parse::<usize>().or_else(|_| {
            self.pos -= 1;
            self.err(format!("expected a count, found `{w}`"))
        })
    }
}

struct Parsed {
    joints: Vec<Joint>,
    end_sites: Vec<EndSite>,
    channels: Vec<Vec<Channel>>,
}

fn parse_channel(tokens: &Tokens, w: &str) -> Result<Channel, MotionError> {
    let lower = w.to_ascii_lowercase();
    let axis = match lower.chars().next() {
        Some('x') => 0,
        Some('y') => 1,
        Some('z') => 2,
        _ => return tokens.err(format!("unsupported channel `{w}`")),
    };
    match &lower[1..] {
        "position" => Ok(Channel::Pos(axis)),
        "rotation" => Ok(Channel::Rot(axis)),
        _ => tokens.err(format!("unsupported channel `{w}`")),
    }
}

fn parse_offset(tokens: &mut Tokens) -> Result<[f64; 3], MotionError> {
    tokens.expect("OFFSET")?;
    Ok([tokens.number()?, tokens.number()?, tokens.number()?])
}

fn parse_joint(tokens: &mut Tokens, parent: Option<usize>, out: &mut Parsed) -> Result<(), MotionError> {
    let name = tokens.next()?.to_string();
    tokens.expect("{")?;
    let offset = parse_offset(tokens)?;
    tokens.expect("CHANNELS")?;
    let n = tokens.count()?;
    let mut chans = Vec::with_capacity(n);
    for _ in 0..n {
        let w = tokens.next()?;
        chans.push(parse_channel(tokens, w)?);
    }
    let rot_axes: Vec<usize> = chans
        .iter()
        .filter_map(|c| if let Channel::Rot(a) = c { Some(*a) } else { None })
        .collect();
    let pos_axes: Vec<usize> = chans
        .iter()
        .filter_map(|c| if let Channel::Pos(a) = c { Some(*a) } else { None })
        .collect();
    let order = match rot_axes.as_slice() {
        &[a, b, c] => EulerOrder::from_axes([a, b, c]),
        _ => None,
    };
    let Some(order) = order else {
        return tokens.err(format!("joint `{name}` needs three distinct rotation channels"));
    };
    let pos_ok = match parent {
        None => {
            let mut sorted = pos_axes.clone();
            sorted.sort_unstable();
            sorted == [0, 1, 2]
        }
        Some(_) => pos_axes.is_empty(),
    };
    if !pos_ok {
        return tokens.err(format!(
            "joint `{name}`: the root needs three position channels and other joints none"
        ));
    }
    let index = out.joints.len();
    out.joints.push(Joint {
        name,
        parent,
        offset,
        rotation_order: order,
    });
    out.channels.push(chans);
    loop {
        match tokens.peek() {
            Some(w) if w.eq_ignore_ascii_case("JOINT") => {
                tokens.next()?;
                parse_joint(tokens, Some(index), out)?;
            }
            Some(w) if w.eq_ignore_ascii_case("End") => {
                tokens.next()?;
                tokens.expect("Site")?;
                tokens.expect("{")?;
                let offset = parse_offset(tokens)?;
                tokens.expect("}")?;
                out.end_sites.push(EndSite { parent: index, offset });
            }
            Some("}") => {
                tokens.next()?;
                return Ok(());
            }
            Some(w) => return tokens.err(format!("unexpected token `{w}` in joint body")),
            None => return tokens.err("unexpected end of file in hierarchy"),
        }
    }
}

pub fn parse_bvh_with(text: &str, opts: &BvhOptions) -> Result<(Skeleton, Motion), MotionError> {
    let mut tokens = Tokens::new(text);
    tokens.expect("HIERARCHY")?;
    tokens.expect("ROOT")?;
    let mut parsed = Parsed {
        joints: Vec::new(),
        end_sites: Vec::new(),
        channels: Vec::new(),
    };
    parse_joint(&mut tokens, None, &mut parsed)?;
    tokens.expect("MOTION")?;
    tokens.expect("Frames:")?;
    let frames = tokens.count()?;
    tokens.expect("Frame")?;
    tokens.expect("Time:")?;
    let frame_time = tokens.number()?;
    if frames == 0 {
        return tokens.err("file contains no frames");
    }

    let Parsed {
        joints,
        end_sites,
        channels,
    } = parsed;
    let total: usize = channels.iter().map(Vec::len).sum();
    let remaining = tokens.items.len() - tokens.pos;
    if remaining != frames * total {
        return tokens.err(format!(
            "expected {frames} frames × {total} channels = {} values, found {remaining}",
            frames * total
        ));
    }

    let mut skel = Skeleton::new(joints, end_sites, Vec::new(), frame_time)?;
    skel.foot_joints = match &opts.foot_joints {
        Some(names) => names
            .iter()
            .map(|n| {
                skel.joint_index(n)
                    .ok_or_else(|| MotionError::InvalidSkeleton(format!("unknown foot joint `{n}`")))
            })
            .collect::<Result<_, _>>()?,
        None => skel.guess_foot_joints(),
    };

    let mut motion = Motion::rest(skel.num_joints(), skel.num_feet(), frames);
    for t in 0..frames {
        for (j, chans) in channels.iter().enumerate() {
            let mut pos = [0.0; 3];
            let mut rot = [0.0; 3];
            let mut r = 0;
            for c in chans {
                let v = tokens.number()?;
                match c {
                    Channel::Pos(a) => pos[*a] = v,
                    Channel::Rot(_) => {
                        rot[r] = v;
                        r += 1;
                    }
                }
            }
            let m = euler_to_matrix(skel.joints[j].rotation_order, rot);
            motion.set_rot6d(t, j, &matrix_to_rot6d(&m));
            if j == 0 {
                motion.set_root_pos(t, Vector3::from(pos));
            }
        }
    }

    if frames >= 2 && skel.num_feet() > 0 {
        let eps = opts.contact_threshold.unwrap_or_else(|| skel.default_contact_threshold());
        let labels = contact_labels(&skel, &motion, eps)?;
        set_contacts(&mut motion, &labels);
    }
    Ok((skel, motion))
}

fn set_contacts(motion: &mut Motion, labels: &Tensor) {
    for f in 0..motion.num_feet() {
        for t in 0..motion.frames() {
            motion.set_contact(t, f, labels.at(f, t));
        }
    }
}

fn axis_name(a: usize) -> char {
    ['X', 'Y', 'Z'][a]
}

/// Serializes a motion; contact labels have no BVH slot and are dropped.
pub fn write_bvh(skel: &Skeleton, motion: &Motion) -> Result<String, MotionError> {
    motion.check_skeleton(skel)?;
    let mut s = String::from("HIERARCHY\n");
    write_joint(skel, 0, 0, &mut s);
    // Channel values follow the hierarchy, which may differ from the
    // skeleton's storage order.
    let mut order = Vec::with_capacity(skel.num_joints());
    let mut stack = vec![0];
    while let Some(j) = stack.pop() {
        order.push(j);
        let kids: Vec<usize> = skel.children(j).collect();
        stack.extend(kids.into_iter().rev());
    }
    let _ = writeln!(s, "MOTION\nFrames: {}\nFrame Time: {:.6}", motion.frames(), skel.frame_time);
    for t in 0..motion.frames() {
        let mut vals: Vec<f64> = Vec::with_capacity(3 + 3 * skel.num_joints());
        let p = motion.root_pos(t);
        vals.extend([p.x, p.y, p.z]);
        for &j in &order {
            vals.extend(matrix_to_euler(skel.joints[j].rotation_order, &motion.rotation(t, j)?));
        }
        let line: Vec<String> = vals.iter().map(|v| format!("{:.6}", clean_zero(*v))).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    Ok(s)
}

fn clean_zero(v: f64) -> f64 {
    // Avoid printing "-0.000000".
    if v.abs() < 5e-7 {
        0.0
    } else {
        v
    }
}

fn write_joint(skel: &Skeleton, j: usize, depth: usize, s: &mut String) {
    let ind = "\t".repeat(depth);
    let joint = &skel.joints[j];
    let kind = if joint.parent.is_none() { "ROOT" } else { "JOINT" };
    let o = joint.offset;
    let _ = writeln!(s, "{ind}{kind} {}", joint.name);
    let _ = writeln!(s, "{ind}{{");
    let _ = writeln!(s, "{ind}\tOFFSET {:.6} {:.6} {:.6}", o[0], o[1], o[2]);
    let rot: Vec<String> = joint
        .rotation_order
        .axes()
        .iter()
        .map(|&a| format!("{}rotation", axis_name(a)))
        .collect();
    if joint.parent.is_none() {
        let _ = writeln!(s, "{ind}\tCHANNELS 6 Xposition Yposition Zposition {}", rot.join(" "));
    } else {
        let _ = writeln!(s, "{ind}\tCHANNELS 3 {}", rot.join(" "));
    }
    for c in skel.children(j) {
        write_joint(skel, c, depth + 1, s);
    }
    for e in skel.end_sites.iter().filter(|e| e.parent == j) {
        let _ = writeln!(s, "{ind}\tEnd Site\n{ind}\t{{");
        let _ = writeln!(s, "{ind}\t\tOFFSET {:.6} {:.6} {:.6}", e.offset[0], e.offset[1], e.offset[2]);
        let _ = writeln!(s, "{ind}\t}}");
    }
    let _ = writeln!(s, "{ind}}}");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::forward_kinematics;
    use approx::assert_relative_eq;

    const TWO_JOINT: &str = "HIERARCHY
ROOT hips
{
  OFFSET 0 0 0
  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation
  JOINT knee
  {
    OFFSET 0 -1.5 0.25
    CHANNELS 3 Zrotation Xrotation Yrotation
    End Site
    {
      OFFSET 0 -1 0
    }
  }
}
MOTION
Frames: 2
Frame Time: 0.033333
0 0 0 0 0 0 0 0 0
1 2 3 90 0 0 0 0 0
";

    #[test]
    fn zero_rotations_put_joints_at_offsets() {
        let (skel, m) = parse_bvh(TWO_JOINT).unwrap();
        assert_eq!(skel.num_joints(), 2);
        assert_eq!(skel.end_sites.len(), 1);
        assert_eq!(skel.frame_time, 0.033333);
        let p = forward_kinematics(&skel, &m).unwrap();
        assert_eq!(p[0][1], Vector3::new(0.0, -1.5, 0.25));
    }

    #[test]
    fn zxy_frame_matches_hand_conversion() {
        let (_, m) = parse_bvh(TWO_JOINT).unwrap();
        let f = m.rot6d(1, 0);
        let expected = [0.0, -1.0, 0.0, 1.0, 0.0, 0.0];
        for (a, b) in f.iter().zip(expected) {
            assert_relative_eq!(*a, b, epsilon = 1e-15);
        }
        assert_eq!(m.root_pos(1), Vector3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn write_then_parse_preserves_positions() {
        let (skel, m) = parse_bvh(TWO_JOINT).unwrap();
        let text = write_bvh(&skel, &m).unwrap();
        let (skel2, m2) = parse_bvh(&text).unwrap();
        assert_eq!(skel2.frame_time, skel.frame_time);
        let a = forward_kinematics(&skel, &m).unwrap();
        let b = forward_kinematics(&skel2, &m2).unwrap();
        for (fa, fb) in a.iter().zip(&b) {
            for (pa, pb) in fa.iter().zip(fb) {
                assert!((pa - pb).abs().max() < 1e-6);
            }
        }
    }

    #[test]
    fn malformed_inputs_are_reported() {
        let missing_motion = TWO_JOINT.replace("MOTION", "MOTON");
        assert!(matches!(parse_bvh(&missing_motion), Err(MotionError::Bvh { .. })));
        let short = TWO_JOINT.trim_end().trim_end_matches(" 0");
        assert!(matches!(parse_bvh(short), Err(MotionError::Bvh { .. })));
        let bad_channel = TWO_JOINT.replace("CHANNELS 3 Zrotation", "CHANNELS 3 Wrotation");
        match parse_bvh(&bad_channel) {
            Err(MotionError::Bvh { line, msg }) => {
                assert_eq!(line, 9);
                assert!(msg.contains("Wrotation"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn explicit_feet_get_contacts() {
        let opts = BvhOptions {
            foot_joints: Some(vec!["knee".into()]),
            contact_threshold: Some(0.1),
        };
        let (skel, m) = parse_bvh_with(TWO_JOINT, &opts).unwrap();
        assert_eq!(skel.foot_joints, vec![1]);
        // the root jumps by (1,2,3) between frames
        assert_eq!(m.contact(0, 0), 0.0);
        assert_eq!(m.contact(1, 0), 0.0);
    }

    #[test]
    fn non_depth_first_skeletons_round_trip() {
        use crate::synthetic::{quadruped_skeleton, random_motion};
        let skel = quadruped_skeleton();
        let m = random_motion(&skel, 6, 40.0, 2);
        let (skel2, m2) = parse_bvh(&write_bvh(&skel, &m).unwrap()).unwrap();
        let (a, b) = (forward_kinematics(&skel, &m).unwrap(), forward_kinematics(&skel2, &m2).unwrap());
        for (i, joint) in skel.joints.iter().enumerate() {
            let k = skel2.joints.iter().position(|o| o.name == joint.name).unwrap();
            for t in 0..6 {
                assert!((a[t][i] - b[t][k]).amax() < 1e-6, "joint {}", joint.name);
            }
        }
    }
}

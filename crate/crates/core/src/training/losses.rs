//! Loss terms recorded on a tape.

use std::rc::Rc;

use crate::motion::{Skeleton, ROT_FEATURES};
use crate::networks::{discriminator_level, StackSpec, TapeMasks};
use crate::tensor::{SparseMap, Tape, TensorError, Var};

/// Critic and generator adversarial terms plus the gradient-penalty part,
/// all as tape nodes.
pub struct Adversarial {
    pub critic: Var,
    pub penalty: Var,
    pub d_real: Var,
    pub d_fake: Var,
}

/// WGAN-GP critic loss `D(fake) − D(real) + λ_gp (‖∇D(x̂)‖ − 1)²` with
/// `x̂ = λ·fake + (1 − λ)·real`.
#[allow(clippy::too_many_arguments)]
pub fn critic_loss(
    tape: &mut Tape,
    spec: &StackSpec,
    masks: &TapeMasks,
    params: &[Var],
    real: Var,
    fake: Var,
    mix: f64,
    lambda_gp: f64,
) -> Result<Adversarial, TensorError> {
    let d_real = discriminator_level(tape, spec, masks, params, real);
    let d_fake = discriminator_level(tape, spec, masks, params, fake);
    let hat_value = tape.value(fake).zip_map(tape.value(real), |f, r| mix * f + (1.0 - mix) * r);
    let hat = tape.leaf(hat_value);
    let d_hat = discriminator_level(tape, spec, masks, params, hat);
    let grad = tape.grad_graph(d_hat, &[hat])?[0];
    let norm = tape.norm(grad);
    let off = tape.add_const(norm, -1.0);
    let sq = tape.square(off);
    let penalty = tape.scale(sq, lambda_gp);
    let diff = tape.sub(d_fake, d_real);
    let critic = tape.add(diff, penalty);
    Ok(Adversarial {
        critic,
        penalty,
        d_real,
        d_fake,
    })
}

/// Mean absolute error between two equally shaped nodes.
pub fn l1_mean(tape: &mut Tape, a: Var, b: Var) -> Var {
    let d = tape.sub(a, b);
    let abs = tape.abs(d);
    tape.mean(abs)
}

/// `s(x) = 1 / (1 + exp(5 − 10x))`.
pub fn contact_sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (5.0 - 10.0 * x).exp())
}

fn select(tape: &mut Tape, x: Var, rows: &[usize]) -> Var {
    let n = tape.value(x).rows();
    tape.row_map(x, Rc::new(SparseMap::gather(n, rows)))
}

fn row_sum(tape: &mut Tape, x: Var, groups: usize, size: usize) -> Var {
    let n = tape.value(x).rows();
    let entries = (0..groups).map(|g| (0..size).map(|k| (g * size + k, 1.0)).collect()).collect();
    tape.row_map(x, Rc::new(SparseMap::new(groups, n, entries)))
}

/// Rotation matrix rows (9 × T, row-major entries) from 6 feature rows.
fn rot6d_rows(tape: &mut Tape, f: Var) -> Var {
    let a = select(tape, f, &[0, 1, 2]);
    let b = select(tape, f, &[3, 4, 5]);
    let aa = tape.square(a);
    let na2 = row_sum(tape, aa, 1, 3);
    let na = tape.sqrt(na2);
    let inv_a = tape.recip(na);
    let inv_a3 = select(tape, inv_a, &[0, 0, 0]);
    let r1 = tape.mul(a, inv_a3);
    let rb = tape.mul(r1, b);
    let dot = row_sum(tape, rb, 1, 3);
    let dot3 = select(tape, dot, &[0, 0, 0]);
    let proj = tape.mul(r1, dot3);
    let resid = tape.sub(b, proj);
    let rr = tape.square(resid);
    let nr2 = row_sum(tape, rr, 1, 3);
    let nr = tape.sqrt(nr2);
    let inv_r = tape.recip(nr);
    let inv_r3 = select(tape, inv_r, &[0, 0, 0]);
    let r2 = tape.mul(resid, inv_r3);
    let a1 = select(tape, r1, &[1, 2, 0]);
    let b1 = select(tape, r2, &[2, 0, 1]);
    let a2 = select(tape, r1, &[2, 0, 1]);
    let b2 = select(tape, r2, &[1, 2, 0]);
    let p1 = tape.mul(a1, b1);
    let p2 = tape.mul(a2, b2);
    let r3 = tape.sub(p1, p2);
    let place = |start: usize| {
        let entries = (0..9)
            .map(|r| if (start..start + 3).contains(&r) { vec![(r - start, 1.0)] } else { vec![] })
            .collect();
        Rc::new(SparseMap::new(9, 3, entries))
    };
    let m1 = tape.row_map(r1, place(0));
    let m2 = tape.row_map(r2, place(3));
    let m3 = tape.row_map(r3, place(6));
    let m12 = tape.add(m1, m2);
    tape.add(m12, m3)
}

/// `A·B` for 3×3 matrices stored as 9 rows each.
fn matmul_rows(tape: &mut Tape, a: Var, b: Var) -> Var {
    let mut ia = Vec::with_capacity(27);
    let mut ib = Vec::with_capacity(27);
    for r in 0..3 {
        for c in 0..3 {
            for m in 0..3 {
                ia.push(r * 3 + m);
                ib.push(m * 3 + c);
            }
        }
    }
    let ea = select(tape, a, &ia);
    let eb = select(tape, b, &ib);
    let prod = tape.mul(ea, eb);
    row_sum(tape, prod, 9, 3)
}

/// Foot joint positions `[3 × T]` per foot from a `[F0 × T]` feature node.
pub fn foot_positions(tape: &mut Tape, skel: &Skeleton, x: Var) -> Vec<Var> {
    let j_count = skel.num_joints();
    let mut needed = vec![false; j_count];
    for &f in &skel.foot_joints {
        needed[f] = true;
        for a in skel.ancestors(f) {
            needed[a] = true;
        }
    }
    let mut global: Vec<Option<Var>> = vec![None; j_count];
    let mut pos: Vec<Option<Var>> = vec![None; j_count];
    let root_rows: Vec<usize> = (0..3).map(|k| ROT_FEATURES * j_count + k).collect();
    for j in 0..j_count {
        if !needed[j] {
            continue;
        }
        let joint = &skel.joints[j];
        match joint.parent {
            None => pos[j] = Some(select(tape, x, &root_rows)),
            Some(p) => {
                let g = global[p].expect("parent precedes child");
                let o = joint.offset;
                let entries = (0..3).map(|r| (0..3).map(|c| (r * 3 + c, o[c])).collect()).collect();
                let off = tape.row_map(g, Rc::new(SparseMap::new(3, 9, entries)));
                pos[j] = Some(tape.add(pos[p].expect("parent position"), off));
            }
        }
        let has_needed_child = skel.children(j).any(|c| needed[c]);
        if has_needed_child {
            let feats: Vec<usize> = (0..ROT_FEATURES).map(|k| ROT_FEATURES * j + k).collect();
            let f = select(tape, x, &feats);
            let local = rot6d_rows(tape, f);
            global[j] = Some(match joint.parent {
                None => local,
                Some(p) => matmul_rows(tape, global[p].expect("parent rotation"), local),
            });
        }
    }
    skel.foot_joints.iter().map(|&f| pos[f].expect("foot position")).collect()
}

/// Forward difference at frame 0, backward difference elsewhere.
pub fn velocity_map(t: usize) -> SparseMap {
    let entries = (0..t)
        .map(|i| {
            let (a, b) = if i == 0 { (1, 0) } else { (i, i - 1) };
            vec![(a, 1.0), (b, -1.0)]
        })
        .collect();
    SparseMap::new(t, t, entries)
}

/// `(1 / (T|F|)) Σ_j Σ_t ‖v_tj‖² s(L_tj)`. Frame differences are scaled
/// by `rate` (level length over finest length) so every level measures
/// speed per finest frame. Returns `None` without feet.
pub fn contact_loss(tape: &mut Tape, skel: &Skeleton, x: Var, rate: f64) -> Option<Var> {
    if skel.num_feet() == 0 {
        return None;
    }
    let t = tape.value(x).cols();
    assert!(t >= 2, "contact loss needs two frames");
    let feet = foot_positions(tape, skel, x);
    let vmap = Rc::new(velocity_map(t));
    let c0 = ROT_FEATURES * skel.num_joints() + 3;
    let mut total: Option<Var> = None;
    for (f, p) in feet.into_iter().enumerate() {
        let v = tape.time_map(p, vmap.clone());
        let v = tape.scale(v, rate);
        let v2 = tape.square(v);
        let speed2 = row_sum(tape, v2, 1, 3);
        let label = select(tape, x, &[c0 + f]);
        let e = tape.scale(label, -10.0);
        let e = tape.add_const(e, 5.0);
        let e = tape.exp(e);
        let e = tape.add_const(e, 1.0);
        let s = tape.recip(e);
        let term = tape.mul(speed2, s);
        let term = tape.sum(term);
        total = Some(match total {
            Some(acc) => tape.add(acc, term),
            None => term,
        });
    }
    let total = total.expect("at least one foot");
    Some(tape.scale(total, 1.0 / (t * skel.num_feet()) as f64))
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::motion::{axis_rotation, forward_kinematics, matrix_to_rot6d, EulerOrder, Joint, Motion};
    use crate::synthetic::{humanoid_skeleton, random_motion};
    use crate::tensor::Tensor;
    use nalgebra::Vector3;

    #[test]
    fn sigmoid_midpoint() {
        assert_eq!(contact_sigmoid(0.5), 0.5);
    }

    fn one_foot() -> Skeleton {
        let joints = vec![
            Joint {
                name: "root".into(),
                parent: None,
                offset: [0.0; 3],
                rotation_order: EulerOrder::Xyz,
            },
            Joint {
                name: "foot".into(),
                parent: Some(0),
                offset: [0.0, -1.0, 0.0],
                rotation_order: EulerOrder::Xyz,
            },
        ];
        Skeleton::new(joints, vec![], vec![1], 1.0).unwrap()
    }

    #[test]
    fn closed_form_single_foot() {
        let skel = one_foot();
        let mut m = Motion::rest(2, 1, 2);
        m.set_root_pos(1, Vector3::new(2.0, 0.0, 0.0));
        m.set_contact(0, 0, 1.0);
        m.set_contact(1, 0, 1.0);
        let mut tape = Tape::new();
        let x = tape.leaf(m.features().clone());
        let l = contact_loss(&mut tape, &skel, x, 1.0).unwrap();
        let expected = 4.0 / (1.0 + (-5.0f64).exp());
        assert!((tape.value(l).item() - expected).abs() < 1e-9);
    }

    #[test]
    fn static_motion_has_zero_loss() {
        let skel = one_foot();
        let mut m = Motion::rest(2, 1, 5);
        m.set_contact(2, 0, 0.7);
        let mut tape = Tape::new();
        let x = tape.leaf(m.features().clone());
        let l = contact_loss(&mut tape, &skel, x, 1.0).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
    }

    #[test]
    fn taped_fk_matches_plain_fk() {
        let skel = humanoid_skeleton();
        let mut m = random_motion(&skel, 6, 50.0, 4);
        m.set_rot6d(2, 0, &matrix_to_rot6d(&axis_rotation(1, 1.0)));
        let plain = forward_kinematics(&skel, &m).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(m.features().clone());
        let feet = foot_positions(&mut tape, &skel, x);
        for (f, &j) in skel.foot_joints.iter().enumerate() {
            let p = tape.value(feet[f]);
            for t in 0..6 {
                for k in 0..3 {
                    assert!((p.at(k, t) - plain[t][j][k]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn contact_loss_gradient_matches_differences() {
        let skel = one_foot();
        let base = Tensor::matrix(
            16,
            4,
            (0..64).map(|i| ((i * 7 % 11) as f64 * 0.31).sin() + if i % 4 == 0 { 0.8 } else { 0.0 }).collect(),
        )
        .unwrap();
        let f = |p: &[Tensor]| {
            let mut tape = Tape::new();
            let x = tape.leaf(p[0].clone());
            let l = contact_loss(&mut tape, &skel, x, 0.5).unwrap();
            tape.value(l).item()
        };
        let mut tape = Tape::new();
        let x = tape.leaf(base.clone());
        let l = contact_loss(&mut tape, &skel, x, 0.5).unwrap();
        let g = tape.backward(l, &[x]).unwrap().into_vec();
        let fd = crate::oracle::central_difference(&[base], 1e-6, f);
        assert!(crate::oracle::max_relative_error(&g, &fd, 1e-6) < 1e-5);
    }
}

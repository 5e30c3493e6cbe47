use super::{GraphError, ModalGraph, PropagationWeights, Result, Topology};
use crate::numerics::{Tape, Tensor, Var, LEAKY_RELU_SLOPE};

/// Layer-0 node states: `tanh(X_user · W_u)` for users stacked above the
/// raw item feature rows.
pub fn initial_states(tape: &mut Tape, g: &ModalGraph, user_proj: Var) -> Result<Var> {
    let x_user = tape.constant(g.user_features.clone())?;
    let projected = tape.matmul(x_user, user_proj)?;
    let users = tape.tanh(projected)?;
    let items = tape.constant(g.item_features.clone())?;
    Ok(tape.concat(&[users, items], 0)?)
}

/// Plain-tensor form of [`initial_states`].
pub fn init_embeddings(g: &ModalGraph, weights: &PropagationWeights<Tensor>) -> Result<Tensor> {
    let mut tape = Tape::new();
    let w = tape.constant(weights.user_proj.clone())?;
    let v = initial_states(&mut tape, g, w)?;
    Ok(tape.value(v).clone())
}

/// Attention weight `f_a(h, t)` and gate `f_g(h, t)` for the edge `t → h`.
///
/// `projected` holds every node's state after the message transform and
/// `id` the node ID embeddings. Returns `None` if `t` is not a neighbor of
/// `h`.
pub fn attention_and_gate(topology: &Topology, projected: &Tensor, id: &Tensor, h: usize, t: usize) -> Option<(f64, f64)> {
    let neighbors = topology.neighbors(h);
    if !neighbors.contains(&t) {
        return None;
    }
    let scale = (projected.cols() as f64).sqrt();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let logits: Vec<f64> = neighbors
        .iter()
        .map(|&n| dot(projected.row(h), projected.row(n)) / scale)
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let at = neighbors.iter().position(|&n| n == t).expect("checked above");
    let f_a = (logits[at] - max).exp() / total;
    let f_g = crate::numerics::sigmoid(dot(id.row(h), projected.row(t)));
    Some((f_a, f_g))
}

/// Runs `hops` layers of gated attention propagation and returns the
/// concatenated layer outputs, `[n_nodes, hops · d]`.
///
/// Each layer computes, for every node `h`,
/// `agg = LReLU(Σ_t f_a · f_g · P_t)` with `P = H · W_msg`,
/// `self = LReLU(H · W_self + e_h)` and
/// `out = LReLU(agg · W_combine + self)`.
pub fn propagate(
    tape: &mut Tape,
    g: &ModalGraph,
    weights: &PropagationWeights<Var>,
    id: Var,
    hops: usize,
) -> Result<Var> {
    if !(1..=3).contains(&hops) || (hops > 1 && (weights.message_deep.is_none() || weights.self_loop_deep.is_none())) {
        return Err(GraphError::Hops(hops));
    }
    let topology = &g.topology;
    let n = topology.n_nodes();
    let d = tape.shape(weights.combine)[1];
    let (dst, src) = (topology.message_dst(), topology.message_src());
    let id_dst = if dst.is_empty() {
        None
    } else {
        Some(tape.gather_rows(id, dst.clone())?)
    };

    let mut state = initial_states(tape, g, weights.user_proj)?;
    let mut outputs = Vec::with_capacity(hops);
    for layer in 0..hops {
        let (w_msg, w_self) = if layer == 0 {
            (weights.message, weights.self_loop)
        } else {
            (
                weights.message_deep.expect("checked above"),
                weights.self_loop_deep.expect("checked above"),
            )
        };
        let projected = tape.matmul(state, w_msg)?;
        let agg = match id_dst {
            Some(id_dst) => {
                let p_dst = tape.gather_rows(projected, dst.clone())?;
                let p_src = tape.gather_rows(projected, src.clone())?;
                let raw = tape.row_dot(p_dst, p_src)?;
                let logits = tape.scale(raw, 1.0 / (d as f64).sqrt())?;
                let f_a = tape.segment_softmax(logits, dst.clone(), n)?;
                let gate_logits = tape.row_dot(id_dst, p_src)?;
                let f_g = tape.sigmoid(gate_logits)?;
                let coef = tape.mul(f_a, f_g)?;
                let messages = tape.scale_rows(p_src, coef)?;
                let summed = tape.scatter_add_rows(messages, dst.clone(), n)?;
                tape.leaky_relu(summed, LEAKY_RELU_SLOPE)?
            }
            None => tape.constant(Tensor::zeros(&[n, d]))?,
        };
        let own = tape.matmul(state, w_self)?;
        let own = tape.add(own, id)?;
        let own = tape.leaky_relu(own, LEAKY_RELU_SLOPE)?;
        let combined = tape.matmul(agg, weights.combine)?;
        let combined = tape.add(combined, own)?;
        let out = tape.leaky_relu(combined, LEAKY_RELU_SLOPE)?;
        outputs.push(out);
        state = out;
    }
    Ok(tape.concat(&outputs, 1)?)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::features::Modality;
    use crate::graph::{glorot, init_id_embeddings};
    use crate::numerics::{gradient_check, NumericsError};

    fn lrelu(x: f64) -> f64 {
        if x > 0.0 {
            x
        } else {
            LEAKY_RELU_SLOPE * x
        }
    }

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn graph(users: usize, items: usize, edges: &[(usize, usize)], dm: usize, rng: &mut ChaCha8Rng) -> ModalGraph {
        ModalGraph {
            modality: Modality::Image,
            topology: Arc::new(Topology::new(users, items, edges).unwrap()),
            item_features: random(items, dm, rng),
            user_features: random(users, 3, rng),
        }
    }

    fn run(g: &ModalGraph, w: &PropagationWeights<Tensor>, id: &Tensor, hops: usize) -> Tensor {
        let mut tape = Tape::new();
        let wv = w.try_map(|_, t| tape.constant(t.clone())).unwrap();
        let idv = tape.constant(id.clone()).unwrap();
        let out = propagate(&mut tape, g, &wv, idv, hops).unwrap();
        tape.value(out).clone()
    }

    /// Node-by-node loop evaluation used as an oracle for the tape version.
    fn reference(g: &ModalGraph, w: &PropagationWeights<Tensor>, id: &Tensor, hops: usize) -> Vec<Vec<f64>> {
        let topo = &g.topology;
        let n = topo.n_nodes();
        let vecmat = |v: &[f64], m: &Tensor| -> Vec<f64> {
            (0..m.cols()).map(|c| v.iter().enumerate().map(|(r, x)| x * m.row(r)[c]).sum()).collect()
        };
        let mut state: Vec<Vec<f64>> = (0..topo.n_users())
            .map(|u| vecmat(g.user_features.row(u), &w.user_proj).iter().map(|x| x.tanh()).collect())
            .chain((0..topo.n_items()).map(|i| g.item_features.row(i).to_vec()))
            .collect();
        let mut out = vec![Vec::new(); n];
        for layer in 0..hops {
            let (wm, ws) = if layer == 0 {
                (&w.message, &w.self_loop)
            } else {
                (w.message_deep.as_ref().unwrap(), w.self_loop_deep.as_ref().unwrap())
            };
            let proj: Vec<Vec<f64>> = state.iter().map(|s| vecmat(s, wm)).collect();
            let d = wm.cols();
            let p = Tensor::from_rows(&proj).unwrap();
            let mut next = Vec::with_capacity(n);
            for h in 0..n {
                let mut agg = vec![0.0; d];
                for &t in topo.neighbors(h) {
                    let (fa, fg) = attention_and_gate(topo, &p, id, h, t).unwrap();
                    for k in 0..d {
                        agg[k] += fa * fg * proj[t][k];
                    }
                }
                let agg: Vec<f64> = agg.into_iter().map(lrelu).collect();
                let own: Vec<f64> = vecmat(&state[h], ws).iter().zip(id.row(h)).map(|(a, b)| lrelu(a + b)).collect();
                let row: Vec<f64> = vecmat(&agg, &w.combine).iter().zip(&own).map(|(a, b)| lrelu(a + b)).collect();
                out[h].extend_from_slice(&row);
                next.push(row);
            }
            state = next;
        }
        out
    }

    #[test]
    fn two_node_hand_computation() {
        let identity = |n: usize| {
            let mut t = Tensor::zeros(&[n, n]);
            for k in 0..n {
                t.row_mut(k)[k] = 1.0;
            }
            t
        };
        let g = ModalGraph {
            modality: Modality::Price,
            topology: Arc::new(Topology::new(1, 1, &[(0, 0)]).unwrap()),
            item_features: Tensor::matrix(1, 2, vec![0.3, 0.7]).unwrap(),
            user_features: Tensor::matrix(1, 3, vec![0.5, 1.0, 0.0]).unwrap(),
        };
        let w = PropagationWeights {
            user_proj: Tensor::matrix(3, 2, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap(),
            message: identity(2),
            self_loop: identity(2),
            message_deep: None,
            self_loop_deep: None,
            combine: identity(2),
        };
        let out = run(&g, &w, &Tensor::zeros(&[2, 2]), 1);
        let e_u = [0.5f64.tanh(), 1.0f64.tanh()];
        let e_i = [0.3, 0.7];
        // f_a = 1 (single neighbor), f_g = sigmoid(0) = 0.5.
        for k in 0..2 {
            let user = lrelu(0.5 * e_i[k] + lrelu(e_u[k]));
            let item = lrelu(0.5 * e_u[k] + lrelu(e_i[k]));
            assert!((out.row(0)[k] - user).abs() < 1e-15);
            assert!((out.row(1)[k] - item).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_loop_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let edges = [(0, 0), (0, 2), (1, 1), (1, 2), (2, 3), (2, 0), (3, 1)];
        let g = graph(4, 5, &edges, 6, &mut rng);
        let w = PropagationWeights::init(3, 6, 4, 3, &mut rng);
        let id = random(9, 4, &mut rng);
        for hops in 1..=3 {
            let out = run(&g, &w, &id, hops);
            assert_eq!(out.shape(), &[9, 4 * hops]);
            for (h, row) in reference(&g, &w, &id, hops).iter().enumerate() {
                for (a, b) in out.row(h).iter().zip(row) {
                    assert!((a - b).abs() < 1e-12, "node {h}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn attention_normalizes_and_gate_is_open_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let edges: Vec<(usize, usize)> = (0..30).map(|_| (rng.random_range(0..6), rng.random_range(0..8))).collect();
        let topo = Topology::new(6, 8, &edges).unwrap();
        let p = random(14, 5, &mut rng);
        let id = random(14, 5, &mut rng);
        for h in 0..14 {
            if topo.degree(h) == 0 {
                continue;
            }
            let mut total = 0.0;
            for &t in topo.neighbors(h) {
                let (fa, fg) = attention_and_gate(&topo, &p, &id, h, t).unwrap();
                total += fa;
                assert!(fg > 0.0 && fg < 1.0);
            }
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn attention_trivial_cases() {
        let topo = Topology::new(1, 2, &[(0, 0), (0, 1)]).unwrap();
        let p = Tensor::matrix(3, 2, vec![0.4, -1.0, 0.3, 0.2, 0.3, 0.2]).unwrap();
        let zero = Tensor::zeros(&[3, 2]);
        let (fa, fg) = attention_and_gate(&topo, &p, &zero, 0, 1).unwrap();
        assert_eq!(fa, 0.5);
        assert_eq!(fg, 0.5);
        let (fa, _) = attention_and_gate(&topo, &p, &zero, 1, 0).unwrap();
        assert_eq!(fa, 1.0);
        assert!(attention_and_gate(&topo, &p, &zero, 1, 2).is_none());
    }

    #[test]
    fn zero_inputs_give_zero_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = graph(3, 4, &[(0, 0), (1, 1), (2, 2), (2, 3), (0, 3)], 5, &mut rng);
        g.item_features = Tensor::zeros(&[4, 5]);
        g.user_features = Tensor::zeros(&[3, 3]);
        let w = PropagationWeights::init(3, 5, 4, 2, &mut rng);
        let out = run(&g, &w, &Tensor::zeros(&[7, 4]), 2);
        assert_eq!(out.shape(), &[7, 8]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn user_init_is_bounded_and_items_are_raw() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut g = graph(3, 2, &[(0, 0), (1, 1), (2, 0)], 4, &mut rng);
        g.user_features.row_mut(1).iter_mut().for_each(|v| *v = 0.0);
        let w = PropagationWeights::init(3, 4, 4, 1, &mut rng);
        let init = init_embeddings(&g, &w).unwrap();
        assert!(init.row(1).iter().all(|&v| v == 0.0));
        assert!((0..3).all(|u| init.row(u).iter().all(|v| v.abs() < 1.0)));
        assert_eq!(init.row(3), g.item_features.row(0));
        assert_eq!(init.row(4), g.item_features.row(1));
    }

    #[test]
    fn relabeling_permutes_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (nu, ni) = (4, 5);
        let edges = [(0, 0), (0, 4), (1, 1), (1, 2), (2, 3), (3, 0), (3, 2), (2, 4)];
        let g = graph(nu, ni, &edges, 3, &mut rng);
        let w = PropagationWeights::init(3, 3, 4, 2, &mut rng);
        let id = random(nu + ni, 4, &mut rng);
        let pu = [2, 0, 3, 1];
        let pi = [4, 2, 0, 1, 3];
        let node = |h: usize| if h < nu { pu[h] } else { nu + pi[h - nu] };

        let moved: Vec<(usize, usize)> = edges.iter().map(|&(u, i)| (pu[u], pi[i])).collect();
        let mut items = Tensor::zeros(&[ni, 3]);
        for i in 0..ni {
            items.row_mut(pi[i]).copy_from_slice(g.item_features.row(i));
        }
        let mut users = Tensor::zeros(&[nu, 3]);
        for u in 0..nu {
            users.row_mut(pu[u]).copy_from_slice(g.user_features.row(u));
        }
        let mut id2 = Tensor::zeros(&[nu + ni, 4]);
        for h in 0..nu + ni {
            id2.row_mut(node(h)).copy_from_slice(id.row(h));
        }
        let g2 = ModalGraph {
            modality: g.modality,
            topology: Arc::new(Topology::new(nu, ni, &moved).unwrap()),
            item_features: items,
            user_features: users,
        };
        let a = run(&g, &w, &id, 2);
        let b = run(&g2, &w, &id2, 2);
        for h in 0..nu + ni {
            for (x, y) in a.row(h).iter().zip(b.row(node(h))) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn distant_edits_do_not_reach_the_ego() {
        // Path u0 - i0 - u1 - i1 - u2 - i2 - u3 - i3 - u4.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let edges: Vec<(usize, usize)> = (0..4).flat_map(|k| [(k, k), (k + 1, k)]).collect();
        let g = graph(5, 4, &edges, 3, &mut rng);
        let w = PropagationWeights::init(3, 3, 4, 2, &mut rng);
        let id = random(9, 4, &mut rng);
        let base = run(&g, &w, &id, 2);

        let mut far = edges.clone();
        far.push((4, 2));
        let mut g_far = g.clone();
        g_far.topology = Arc::new(Topology::new(5, 4, &far).unwrap());
        g_far.item_features.row_mut(3).iter_mut().for_each(|v| *v += 1.0);
        g_far.user_features.row_mut(3).iter_mut().for_each(|v| *v -= 1.0);
        assert_eq!(run(&g_far, &w, &id, 2).row(0), base.row(0));

        let mut g_near = g.clone();
        g_near.user_features.row_mut(1).iter_mut().for_each(|v| *v += 1.0);
        assert_ne!(run(&g_near, &w, &id, 2).row(0), base.row(0));
    }

    #[test]
    fn bad_hops_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = graph(2, 2, &[(0, 0), (1, 1)], 2, &mut rng);
        let w = PropagationWeights::init(3, 2, 2, 1, &mut rng);
        let mut tape = Tape::new();
        let wv = w.try_map(|_, t| tape.constant(t.clone())).unwrap();
        let id = tape.constant(Tensor::zeros(&[4, 2])).unwrap();
        assert!(matches!(propagate(&mut tape, &g, &wv, id, 2), Err(GraphError::Hops(2))));
        assert!(matches!(propagate(&mut tape, &g, &wv, id, 0), Err(GraphError::Hops(0))));
    }

    #[test]
    fn weight_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = graph(3, 4, &[(0, 0), (0, 1), (1, 1), (1, 2), (2, 3), (2, 0)], 3, &mut rng);
        let w = PropagationWeights::init(3, 3, 4, 2, &mut rng);
        let id = init_id_embeddings(7, 4, &mut rng);
        let target = glorot(7, 8, &mut rng);
        let names: Vec<&str> = w.entries().iter().map(|(n, _)| *n).chain(["id"]).collect();
        for name in names {
            let point = if name == "id" { id.clone() } else { w.entries().into_iter().find(|(n, _)| *n == name).unwrap().1.clone() };
            let loss = |tape: &mut Tape, x: Var| -> crate::numerics::Result<Var> {
                let wv = w.try_map(|n, t| if n == name { Ok(x) } else { tape.constant(t.clone()) })?;
                let idv = if name == "id" { x } else { tape.constant(id.clone())? };
                let out = propagate(tape, &g, &wv, idv, 2).map_err(|e| match e {
                    GraphError::Numerics(n) => n,
                    other => NumericsError::Invalid(other.to_string()),
                })?;
                let t = tape.constant(target.clone())?;
                let prod = tape.mul(out, t)?;
                tape.sum(prod)
            };
            let err = gradient_check(loss, &point, 1e-6).unwrap();
            assert!(err < 1e-6, "{name}: {err}");
        }
    }
}

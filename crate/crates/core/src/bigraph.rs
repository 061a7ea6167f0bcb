//! The two graph levels of the model.
//!
//! A [`LinkGraph`] is a complete graph over one entity's feature nodes. Each
//! round of message passing sums the neighbours' current states (optionally
//! weighted by attention), feeds the sum to a GRU shared by all nodes of the
//! graph, and replaces every state at once. [`encapsulate`] turns a link
//! graph into one state of the [`PlaceGraph`], whose two nodes (user and
//! item) then exchange states across their single port.
//!
//! All node states are batched: a state is a `[batch, dim]` matrix and every
//! row is an independent example.

use crate::autodiff::{Real, Rng, Tape, Tensor, Var};
use crate::nn::{Affine, Bound, GruCell, Mlp, ParameterSet};
use crate::{Error, Result};

/// Fully connected feature graph of one entity.
#[derive(Clone, Debug)]
pub struct LinkGraph {
    node_names: Vec<String>,
    states: Vec<Var>,
    dim: usize,
    batch: usize,
}

impl LinkGraph {
    /// Creates the complete graph over `features`, one node per entry, with
    /// the embedding as the node's initial state.
    pub fn assign_embeddings<F: Real>(tape: &Tape<F>, features: Vec<(String, Var)>) -> Result<Self> {
        let Some((_, first)) = features.first() else {
            return Err(Error::Construction("link graph needs at least one node".into()));
        };
        let (batch, dim) = tape.value(*first).rows_cols()?;
        let mut node_names = Vec::with_capacity(features.len());
        let mut states = Vec::with_capacity(features.len());
        for (name, state) in features {
            if node_names.contains(&name) {
                return Err(Error::Construction(format!("duplicate link-graph node `{name}`")));
            }
            if tape.value(state).rows_cols()? != (batch, dim) {
                return Err(Error::Construction(format!(
                    "node `{name}` has shape {:?}, expected [{batch}, {dim}]",
                    tape.value(state).shape()
                )));
            }
            node_names.push(name);
            states.push(state);
        }
        Ok(LinkGraph {
            node_names,
            states,
            dim,
            batch,
        })
    }

    pub fn node_names(&self) -> &[String] {
        &self.node_names
    }

    pub fn states(&self) -> &[Var] {
        &self.states
    }

    pub fn node_count(&self) -> usize {
        self.states.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Neighbours of node `i` in ascending index order: every other node.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> {
        (0..self.node_count()).filter(move |&k| k != i)
    }

    /// Number of directed edges, `n·(n − 1)`.
    pub fn edge_count(&self) -> usize {
        let n = self.node_count();
        n * n.saturating_sub(1)
    }

    fn with_states(&self, states: Vec<Var>) -> Self {
        LinkGraph {
            node_names: self.node_names.clone(),
            states,
            dim: self.dim,
            batch: self.batch,
        }
    }
}

/// Key and query projections for attention edge reweighing.
#[derive(Clone, Debug)]
pub struct Attention {
    pub key: Affine,
    pub query: Affine,
}

impl Attention {
    /// Registers `{name}.key` and `{name}.query`, both `dim -> dim`.
    pub fn new<F: Real>(params: &mut ParameterSet<F>, name: &str, dim: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Attention {
            key: Affine::new(params, &format!("{name}.key"), dim, dim, rng)?,
            query: Affine::new(params, &format!("{name}.query"), dim, dim, rng)?,
        })
    }
}

/// Per-node weights over that node's neighbours.
///
/// Entry `i` is either `[batch, n − 1]` (one column per neighbour, in
/// [`LinkGraph::neighbors`] order) or `None`, meaning every weight is 1.
#[derive(Clone, Debug)]
pub struct EdgeWeights {
    pub per_node: Vec<Option<Var>>,
}

impl EdgeWeights {
    pub fn unit(nodes: usize) -> Self {
        EdgeWeights {
            per_node: vec![None; nodes],
        }
    }
}

fn softmax_scores<F: Real>(tape: &mut Tape<F>, key: Var, queries: &[Var]) -> Result<Var> {
    if queries.is_empty() {
        return Err(Error::Domain("attention over zero messages".into()));
    }
    let scores = queries
        .iter()
        .map(|&q| tape.row_dot(key, q))
        .collect::<Result<Vec<_>>>()?;
    let scores = tape.concat_cols(&scores)?;
    tape.softmax_rows(scores)
}

/// Attention weights of node state `h` over `messages`:
/// `softmax_j((θ_k·h)ᵀ(θ_q·m_j))`, as `[batch, messages.len()]`.
pub fn attention_coefficients<F: Real>(
    tape: &mut Tape<F>,
    bound: &Bound,
    h: Var,
    messages: &[Var],
    attention: &Attention,
) -> Result<Var> {
    if messages.is_empty() {
        return Err(Error::Domain("attention over zero messages".into()));
    }
    let key = attention.key.forward(tape, bound, h)?;
    let queries = messages
        .iter()
        .map(|&m| attention.query.forward(tape, bound, m))
        .collect::<Result<Vec<_>>>()?;
    softmax_scores(tape, key, &queries)
}

/// One synchronous round of message passing.
///
/// Every node reads the time-`t` states only. Without attention the message
/// to node `i` is the plain sum of its neighbours' states; with attention it
/// is the attention-weighted sum. The returned weights are the ones used.
pub fn link_round<F: Real>(
    tape: &mut Tape<F>,
    bound: &Bound,
    graph: &LinkGraph,
    cell: &GruCell,
    attention: Option<&Attention>,
) -> Result<(LinkGraph, EdgeWeights)> {
    let n = graph.node_count();
    let weights = match attention {
        Some(attention) if n > 1 => {
            // Queries depend only on the sending node; compute each once.
            let queries = graph
                .states
                .iter()
                .map(|&h| attention.query.forward(tape, bound, h))
                .collect::<Result<Vec<_>>>()?;
            let mut per_node = Vec::with_capacity(n);
            for i in 0..n {
                let key = attention.key.forward(tape, bound, graph.states[i])?;
                let neighbour_queries: Vec<Var> = graph.neighbors(i).map(|k| queries[k]).collect();
                per_node.push(Some(softmax_scores(tape, key, &neighbour_queries)?));
            }
            EdgeWeights { per_node }
        }
        _ => EdgeWeights::unit(n),
    };
    let next = link_round_weighted(tape, bound, graph, cell, &weights)?;
    Ok((next, weights))
}

/// Message passing with caller-supplied edge weights.
pub fn link_round_weighted<F: Real>(
    tape: &mut Tape<F>,
    bound: &Bound,
    graph: &LinkGraph,
    cell: &GruCell,
    weights: &EdgeWeights,
) -> Result<LinkGraph> {
    let n = graph.node_count();
    if weights.per_node.len() != n {
        return Err(Error::dim("edge weights", &[weights.per_node.len()], &[n]));
    }
    let mut next = Vec::with_capacity(n);
    for i in 0..n {
        let h = graph.states[i];
        let mut message: Option<Var> = None;
        for (j, k) in graph.neighbors(i).enumerate() {
            let term = match weights.per_node[i] {
                Some(w) => {
                    let a = tape.slice_cols(w, j, 1)?;
                    tape.scale_rows(graph.states[k], a)?
                }
                None => graph.states[k],
            };
            message = Some(match message {
                Some(acc) => tape.add(acc, term)?,
                None => term,
            });
        }
        let message = match message {
            Some(m) => m,
            None => tape.constant(Tensor::zeros(&[graph.batch, graph.dim])),
        };
        next.push(cell.step(tape, bound, message, h)?);
    }
    Ok(graph.with_states(next))
}

/// Concatenates node states in declaration order and maps them through
/// `encoder` to a place-graph state.
pub fn encapsulate<F: Real>(tape: &mut Tape<F>, bound: &Bound, graph: &LinkGraph, encoder: &Mlp) -> Result<Var> {
    let width = graph.node_count() * graph.dim;
    if encoder.in_dim() != width {
        return Err(Error::dim("encapsulate", &[graph.node_count(), graph.dim], &[encoder.in_dim()]));
    }
    let joined = tape.concat_cols(&graph.states)?;
    encoder.forward(tape, bound, joined)
}

/// The user and item nodes joined by one port.
#[derive(Clone, Copy, Debug)]
pub struct PlaceGraph {
    pub user: Var,
    pub item: Var,
}

/// One synchronous exchange across the port: each node's message is the
/// other node's pre-update state.
pub fn place_round<F: Real>(tape: &mut Tape<F>, bound: &Bound, graph: PlaceGraph, cell: &GruCell) -> Result<PlaceGraph> {
    let user = cell.step(tape, bound, graph.item, graph.user)?;
    let item = cell.step(tape, bound, graph.user, graph.item)?;
    Ok(PlaceGraph { user, item })
}

#[cfg(test)]
mod tests {
    use super::*;

    const DIM: usize = 3;

    fn setup(seed: u64) -> (ParameterSet<f64>, GruCell, Attention) {
        let mut params = ParameterSet::new();
        let mut rng = Rng::new(seed);
        let cell = GruCell::new(&mut params, "gru", DIM, DIM, &mut rng).unwrap();
        let attention = Attention::new(&mut params, "attn", DIM, &mut rng).unwrap();
        (params, cell, attention)
    }

    fn random_states(rng: &mut Rng, n: usize, batch: usize) -> Vec<Tensor<f64>> {
        (0..n)
            .map(|_| Tensor::new(&[batch, DIM], (0..batch * DIM).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap())
            .collect()
    }

    fn graph_of(tape: &mut Tape<f64>, states: &[Tensor<f64>]) -> LinkGraph {
        let features = states
            .iter()
            .enumerate()
            .map(|(i, s)| (format!("f{i}"), tape.constant(s.clone())))
            .collect();
        LinkGraph::assign_embeddings(tape, features).unwrap()
    }

    fn round(
        params: &ParameterSet<f64>,
        cell: &GruCell,
        attention: Option<&Attention>,
        states: &[Tensor<f64>],
    ) -> Vec<Tensor<f64>> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let graph = graph_of(&mut tape, states);
        let (next, _) = link_round(&mut tape, &bound, &graph, cell, attention).unwrap();
        next.states().iter().map(|&v| tape.value(v).clone()).collect()
    }

    #[test]
    fn complete_topology() {
        let mut tape = Tape::<f64>::new();
        let mut rng = Rng::new(0);
        let five = graph_of(&mut tape, &random_states(&mut rng, 5, 1));
        assert_eq!(five.node_count(), 5);
        for i in 0..5 {
            assert_eq!(five.neighbors(i).count(), 4);
            assert!(five.neighbors(i).all(|k| k != i));
        }
        let one = graph_of(&mut tape, &random_states(&mut rng, 1, 1));
        assert_eq!(one.edge_count(), 0);
        let two = graph_of(&mut tape, &random_states(&mut rng, 2, 1));
        assert_eq!(two.neighbors(0).collect::<Vec<_>>(), vec![1]);
        assert_eq!(two.neighbors(1).collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn construction_errors() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[1, 3]));
        let b = tape.constant(Tensor::zeros(&[1, 4]));
        let dup = LinkGraph::assign_embeddings(&tape, vec![("x".into(), a), ("x".into(), a)]);
        assert!(matches!(dup, Err(Error::Construction(_))));
        let mismatched = LinkGraph::assign_embeddings(&tape, vec![("x".into(), a), ("y".into(), b)]);
        assert!(matches!(mismatched, Err(Error::Construction(_))));
    }

    #[test]
    fn attention_single_and_symmetric() {
        let (params, _, attention) = setup(1);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let h = tape.constant(Tensor::vector(&[0.2, -0.4, 0.9]).unwrap());
        let m = tape.constant(Tensor::vector(&[1.0, 2.0, 3.0]).unwrap());
        let one = attention_coefficients(&mut tape, &bound, h, &[m], &attention).unwrap();
        assert_eq!(tape.value(one).data(), &[1.0]);
        let two = attention_coefficients(&mut tape, &bound, h, &[m, m], &attention).unwrap();
        assert_eq!(tape.value(two).data(), &[0.5, 0.5]);
        assert!(attention_coefficients(&mut tape, &bound, h, &[], &attention).is_err());
    }

    #[test]
    fn attention_identity_projections() {
        let mut params = ParameterSet::<f64>::new();
        let attention = Attention::new(&mut params, "attn", 2, &mut Rng::new(0)).unwrap();
        *params.tensor_mut(attention.key.weight) = Tensor::identity(2);
        *params.tensor_mut(attention.query.weight) = Tensor::identity(2);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let h = tape.constant(Tensor::vector(&[1.0, 0.0]).unwrap());
        let m1 = tape.constant(Tensor::vector(&[1.0, 0.0]).unwrap());
        let m2 = tape.constant(Tensor::vector(&[0.0, 1.0]).unwrap());
        let w = attention_coefficients(&mut tape, &bound, h, &[m1, m2], &attention).unwrap();
        // softmax([1, 0]) = [e/(e+1), 1/(e+1)]
        let w = tape.value(w).data();
        assert!((w[0] - 0.731_058_6).abs() < 1e-4);
        assert!((w[1] - 0.268_941_4).abs() < 1e-4);
    }

    #[test]
    fn single_node_gets_zero_message() {
        let (params, cell, attention) = setup(2);
        let mut rng = Rng::new(3);
        let states = random_states(&mut rng, 1, 2);
        let got = round(&params, &cell, Some(&attention), &states);

        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let zero = tape.constant(Tensor::zeros(&[2, DIM]));
        let h = tape.constant(states[0].clone());
        let expected = cell.step(&mut tape, &bound, zero, h).unwrap();
        assert!(got[0].bit_eq(tape.value(expected)));
    }

    #[test]
    fn two_nodes_exchange_states() {
        let (params, cell, _) = setup(4);
        let mut rng = Rng::new(5);
        let states = random_states(&mut rng, 2, 1);
        let got = round(&params, &cell, None, &states);
        for (i, other) in [(0, 1), (1, 0)] {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let m = tape.constant(states[other].clone());
            let h = tape.constant(states[i].clone());
            let expected = cell.step(&mut tape, &bound, m, h).unwrap();
            assert!(got[i].bit_eq(tape.value(expected)));
        }
    }

    #[test]
    fn unit_weights_reproduce_plain_sum() {
        let (params, cell, _) = setup(6);
        let mut rng = Rng::new(7);
        let states = random_states(&mut rng, 4, 3);
        let plain = round(&params, &cell, None, &states);

        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let graph = graph_of(&mut tape, &states);
        let ones = EdgeWeights {
            per_node: (0..4).map(|_| Some(tape.constant(Tensor::full(&[3, 3], 1.0)))).collect(),
        };
        let weighted = link_round_weighted(&mut tape, &bound, &graph, &cell, &ones).unwrap();
        for (p, &w) in plain.iter().zip(weighted.states()) {
            assert!(p.bit_eq(tape.value(w)));
        }
    }

    #[test]
    fn attention_rows_are_distributions() {
        let (params, cell, attention) = setup(8);
        let mut rng = Rng::new(9);
        let states = random_states(&mut rng, 5, 4);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let graph = graph_of(&mut tape, &states);
        let (_, weights) = link_round(&mut tape, &bound, &graph, &cell, Some(&attention)).unwrap();
        for w in weights.per_node.iter().map(|w| w.unwrap()) {
            let t = tape.value(w);
            assert_eq!(t.shape(), &[4, 4]);
            for r in 0..4 {
                assert!((t.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
                assert!(t.row(r).iter().all(|&a| a >= 0.0));
            }
        }
    }

    #[test]
    fn updates_read_the_old_snapshot() {
        let (params, cell, _) = setup(10);
        let mut rng = Rng::new(11);
        let states = random_states(&mut rng, 3, 2);
        let got = round(&params, &cell, None, &states);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let s: Vec<Var> = states.iter().map(|t| tape.constant(t.clone())).collect();
        // Node 2 sees the old states of 0 and 1, not node 0's or 1's update.
        let m = tape.add(s[0], s[1]).unwrap();
        let expected = cell.step(&mut tape, &bound, m, s[2]).unwrap();
        assert!(got[2].bit_eq(tape.value(expected)));
    }

    #[test]
    fn one_round_reaches_every_node() {
        let (params, cell, attention) = setup(12);
        let mut rng = Rng::new(13);
        let states = random_states(&mut rng, 5, 1);
        for attn in [None, Some(&attention)] {
            let base = round(&params, &cell, attn, &states);
            for source in 0..5 {
                let mut perturbed = states.clone();
                perturbed[source].data_mut()[0] += 0.5;
                let moved = round(&params, &cell, attn, &perturbed);
                for target in (0..5).filter(|&t| t != source) {
                    assert!(!base[target].bit_eq(&moved[target]), "{source} -> {target}");
                }
            }
        }
    }

    #[test]
    fn encapsulate_shapes_and_order() {
        let mut params = ParameterSet::<f64>::new();
        let mut rng = Rng::new(14);
        let encoder = Mlp::new(&mut params, "enc", &[2 * DIM, 8, 4], &mut rng).unwrap();
        let states = random_states(&mut rng, 2, 1);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let forward = graph_of(&mut tape, &states);
        let reversed = graph_of(&mut tape, &[states[1].clone(), states[0].clone()]);
        let a = encapsulate(&mut tape, &bound, &forward, &encoder).unwrap();
        let b = encapsulate(&mut tape, &bound, &reversed, &encoder).unwrap();
        assert_eq!(tape.value(a).shape(), &[1, 4]);
        assert!(!tape.value(a).bit_eq(tape.value(b)));

        let three = graph_of(&mut tape, &random_states(&mut rng, 3, 1));
        assert!(matches!(encapsulate(&mut tape, &bound, &three, &encoder), Err(Error::Dimension { .. })));
    }

    #[test]
    fn encapsulate_zero_weights_gives_final_bias() {
        let mut params = ParameterSet::<f64>::new();
        let encoder = Mlp::new(&mut params, "enc", &[2 * DIM, 5, 2], &mut Rng::new(0)).unwrap();
        for (_, t) in params.iter_mut() {
            *t = Tensor::zeros(t.shape());
        }
        *params.tensor_mut(encoder.layers[1].bias) = Tensor::vector(&[0.7, -0.2]).unwrap();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let graph = graph_of(&mut tape, &[Tensor::zeros(&[1, DIM]), Tensor::zeros(&[1, DIM])]);
        let out = encapsulate(&mut tape, &bound, &graph, &encoder).unwrap();
        assert_eq!(tape.value(out).data(), &[0.7, -0.2]);
    }

    #[test]
    fn place_round_fixed_points() {
        let (mut params, cell, _) = setup(15);
        let state = |tape: &mut Tape<f64>, v: [f64; 3]| tape.constant(Tensor::matrix(1, 3, v.to_vec()).unwrap());

        *params.tensor_mut(cell.b_z) = Tensor::full(&[DIM], -1e6);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let pg = PlaceGraph {
            user: state(&mut tape, [0.1, 0.2, 0.3]),
            item: state(&mut tape, [-0.5, 0.0, 0.5]),
        };
        let next = place_round(&mut tape, &bound, pg, &cell).unwrap();
        assert_eq!(tape.value(next.user).data(), &[0.1, 0.2, 0.3]);
        assert_eq!(tape.value(next.item).data(), &[-0.5, 0.0, 0.5]);

        for (_, t) in params.iter_mut() {
            *t = Tensor::zeros(t.shape());
        }
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let pg = PlaceGraph {
            user: state(&mut tape, [0.0; 3]),
            item: state(&mut tape, [0.0; 3]),
        };
        let next = place_round(&mut tape, &bound, pg, &cell).unwrap();
        assert_eq!(tape.value(next.user).data(), &[0.0; 3]);
        assert_eq!(tape.value(next.item).data(), &[0.0; 3]);
    }

    #[test]
    fn place_round_matches_scalar_oracle() {
        // 2-dim cell, traced by hand from the GRU equations.
        let mut params = ParameterSet::<f64>::new();
        let cell = GruCell::new(&mut params, "place", 2, 2, &mut Rng::new(16)).unwrap();
        let p = |id| params.tensor(id).clone();
        let (wz, wr, wh, uz, ur, uh) = (p(cell.w_z), p(cell.w_r), p(cell.w_h), p(cell.u_z), p(cell.u_r), p(cell.u_h));
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let gru = |x: [f64; 2], h: [f64; 2]| {
            let lin = |w: &Tensor<f64>, u: &Tensor<f64>, x: [f64; 2], h: [f64; 2], i: usize| {
                w.at(i, 0) * x[0] + w.at(i, 1) * x[1] + u.at(i, 0) * h[0] + u.at(i, 1) * h[1]
            };
            let r = [sig(lin(&wr, &ur, x, h, 0)), sig(lin(&wr, &ur, x, h, 1))];
            let rh = [r[0] * h[0], r[1] * h[1]];
            let mut out = [0.0; 2];
            for i in 0..2 {
                let z = sig(lin(&wz, &uz, x, h, i));
                let cand = lin(&wh, &uh, x, rh, i).tanh();
                out[i] = (1.0 - z) * h[i] + z * cand;
            }
            out
        };
        let (nu, ni) = ([0.3, -0.7], [0.8, 0.1]);
        let expected_user = gru(ni, nu);
        let expected_item = gru(nu, ni);

        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let pg = PlaceGraph {
            user: tape.constant(Tensor::matrix(1, 2, nu.to_vec()).unwrap()),
            item: tape.constant(Tensor::matrix(1, 2, ni.to_vec()).unwrap()),
        };
        let next = place_round(&mut tape, &bound, pg, &cell).unwrap();
        for (got, want) in [(next.user, expected_user), (next.item, expected_item)] {
            for (g, w) in tape.value(got).data().iter().zip(want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            /// Relabelling nodes permutes the updated states the same way.
            #[test]
            fn relabelling_permutes_outputs(seed in any::<u64>(), n in 2usize..6, attn in any::<bool>()) {
                let (params, cell, attention) = setup(seed);
                let mut rng = crate::autodiff::Rng::new(seed ^ 0xabc);
                let states = random_states(&mut rng, n, 2);
                let mut perm: Vec<usize> = (0..n).collect();
                rng.shuffle(&mut perm);
                let relabelled: Vec<Tensor<f64>> = perm.iter().map(|&p| states[p].clone()).collect();
                let attention = attn.then_some(&attention);
                let base = round(&params, &cell, attention, &states);
                let moved = round(&params, &cell, attention, &relabelled);
                for (i, &p) in perm.iter().enumerate() {
                    for (a, b) in moved[i].data().iter().zip(base[p].data()) {
                        prop_assert!((a - b).abs() < 1e-12);
                    }
                }
            }
        }
    }
}

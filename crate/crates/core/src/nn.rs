//! Trainable layers and the parameter registry they live in.
//!
//! Layers only hold [`ParamId`]s. The tensors themselves sit in a
//! [`ParameterSet`]; a forward pass first [binds](ParameterSet::bind) the set
//! to a tape and then looks each parameter up by id in the resulting
//! [`Bound`] table.

use indexmap::IndexMap;

use crate::autodiff::{kaiming_uniform, Gradients, Real, Rng, Tape, Tensor, Var};
use crate::{Error, Result};

/// Position of a parameter in its [`ParameterSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable tensors in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet<F> {
    entries: IndexMap<String, Tensor<F>>,
}

impl<F: Real> ParameterSet<F> {
    pub fn new() -> Self {
        ParameterSet {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<F>) -> Result<ParamId> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Construction(format!("duplicate parameter `{name}`")));
        }
        let (index, _) = self.entries.insert_full(name, tensor);
        Ok(ParamId(index))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.entries.get_index_of(name).map(ParamId)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        self.entries.get_mut(name)
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.entries.get_index(id.0).expect("parameter id").0
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.entries[id.0]
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<F>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    /// Places every parameter on `tape` as a gradient-tracking leaf.
    pub fn bind(&self, tape: &mut Tape<F>) -> Bound {
        Bound {
            vars: self
                .entries
                .values()
                .map(|t| tape.leaf(t.clone().with_requires_grad(true)))
                .collect(),
        }
    }

    pub fn cast<G: Real>(&self) -> ParameterSet<G> {
        ParameterSet {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Same names in the same order with bit-identical tensors.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.len() == other.len()
            && self
                .iter()
                .zip(other.iter())
                .all(|((na, ta), (nb, tb))| na == nb && ta.bit_eq(tb))
    }
}

/// Tape handles for a bound [`ParameterSet`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// One gradient per parameter, in registration order; zero where the
    /// root did not depend on the parameter.
    pub fn gradients<F: Real>(&self, grads: &Gradients<F>) -> Vec<Tensor<F>> {
        self.vars.iter().map(|&v| grads.wrt(v)).collect()
    }
}

/// `y = W·x + b` applied to each row of `x`.
#[derive(Clone, Debug)]
pub struct Affine {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Affine {
    /// Registers `{name}.weight` (Kaiming-uniform, `fan_in = in_dim`) and a
    /// zero `{name}.bias`.
    pub fn new<F: Real>(
        params: &mut ParameterSet<F>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let weight = params.insert(
            format!("{name}.weight"),
            kaiming_uniform(in_dim, &[out_dim, in_dim], rng)?,
        )?;
        let bias = params.insert(format!("{name}.bias"), Tensor::zeros(&[out_dim]))?;
        Ok(Affine {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<F: Real>(&self, tape: &mut Tape<F>, bound: &Bound, x: Var) -> Result<Var> {
        let (_, cols) = tape.value(x).rows_cols()?;
        if cols != self.in_dim {
            return Err(Error::dim(
                "affine",
                tape.value(x).shape(),
                &[self.out_dim, self.in_dim],
            ));
        }
        let wx = tape.matmul_nt(x, bound.var(self.weight))?;
        tape.add_row(wx, bound.var(self.bias))
    }
}

/// Gated recurrent unit.
///
/// ```text
/// z  = σ(W_z x + U_z h + b_z)
/// r  = σ(W_r x + U_r h + b_r)
/// h̃  = tanh(W_h x + U_h (r ⊙ h) + b_h)
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// ```
#[derive(Clone, Debug)]
pub struct GruCell {
    pub w_z: ParamId,
    pub w_r: ParamId,
    pub w_h: ParamId,
    pub u_z: ParamId,
    pub u_r: ParamId,
    pub u_h: ParamId,
    pub b_z: ParamId,
    pub b_r: ParamId,
    pub b_h: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl GruCell {
    pub fn new<F: Real>(
        params: &mut ParameterSet<F>,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut input = |gate: &str, rng: &mut Rng| {
            params
                .insert(
                    format!("{name}.w_{gate}"),
                    kaiming_uniform(input_dim, &[hidden_dim, input_dim], rng)?,
                )
        };
        let w_z = input("z", rng)?;
        let w_r = input("r", rng)?;
        let w_h = input("h", rng)?;
        let mut recurrent = |gate: &str, rng: &mut Rng| {
            params.insert(
                format!("{name}.u_{gate}"),
                kaiming_uniform(hidden_dim, &[hidden_dim, hidden_dim], rng)?,
            )
        };
        let u_z = recurrent("z", rng)?;
        let u_r = recurrent("r", rng)?;
        let u_h = recurrent("h", rng)?;
        let mut bias = |gate: &str| params.insert(format!("{name}.b_{gate}"), Tensor::zeros(&[hidden_dim]));
        let b_z = bias("z")?;
        let b_r = bias("r")?;
        let b_h = bias("h")?;
        Ok(GruCell {
            w_z,
            w_r,
            w_h,
            u_z,
            u_r,
            u_h,
            b_z,
            b_r,
            b_h,
            input_dim,
            hidden_dim,
        })
    }

    fn gate<F: Real>(
        &self,
        tape: &mut Tape<F>,
        bound: &Bound,
        x: Var,
        h: Var,
        (w, u, b): (ParamId, ParamId, ParamId),
    ) -> Result<Var> {
        let wx = tape.matmul_nt(x, bound.var(w))?;
        let uh = tape.matmul_nt(h, bound.var(u))?;
        let s = tape.add(wx, uh)?;
        tape.add_row(s, bound.var(b))
    }

    /// One step on a batch: `x: [B, input_dim]`, `h: [B, hidden_dim]`.
    pub fn step<F: Real>(&self, tape: &mut Tape<F>, bound: &Bound, x: Var, h: Var) -> Result<Var> {
        let (xr, xc) = tape.value(x).rows_cols()?;
        let (hr, hc) = tape.value(h).rows_cols()?;
        if xc != self.input_dim || hc != self.hidden_dim || xr != hr {
            return Err(Error::dim("gru_step", tape.value(x).shape(), tape.value(h).shape()));
        }
        let z = self.gate(tape, bound, x, h, (self.w_z, self.u_z, self.b_z))?;
        let z = tape.sigmoid(z);
        let r = self.gate(tape, bound, x, h, (self.w_r, self.u_r, self.b_r))?;
        let r = tape.sigmoid(r);
        let rh = tape.mul(r, h)?;
        let candidate = self.gate(tape, bound, x, rh, (self.w_h, self.u_h, self.b_h))?;
        let candidate = tape.tanh(candidate);
        let keep = tape.scale_shift(z, -F::one(), F::one());
        let kept = tape.mul(keep, h)?;
        let fresh = tape.mul(z, candidate)?;
        tape.add(kept, fresh)
    }
}

/// Learnable rows indexed by a categorical feature.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    pub name: String,
    pub rows: ParamId,
    pub vocab_size: usize,
    pub dim: usize,
}

impl EmbeddingTable {
    /// Registers `name` as a `[vocab_size, dim]` table, Kaiming-uniform with
    /// `fan_in = dim`.
    pub fn new<F: Real>(
        params: &mut ParameterSet<F>,
        name: &str,
        vocab_size: usize,
        dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::Construction(format!("embedding `{name}` has an empty vocabulary")));
        }
        let rows = params.insert(name, kaiming_uniform(dim, &[vocab_size, dim], rng)?)?;
        Ok(EmbeddingTable {
            name: name.to_string(),
            rows,
            vocab_size,
            dim,
        })
    }

    fn check(&self, index: usize) -> Result<()> {
        if index >= self.vocab_size {
            return Err(Error::Vocabulary {
                table: self.name.clone(),
                index,
                size: self.vocab_size,
            });
        }
        Ok(())
    }

    /// One row per index, as `[indices.len(), dim]`.
    pub fn lookup<F: Real>(&self, tape: &mut Tape<F>, bound: &Bound, indices: &[usize]) -> Result<Var> {
        for &i in indices {
            self.check(i)?;
        }
        tape.gather(bound.var(self.rows), indices)
    }

    /// Sum of the rows in each bag (multi-valued features such as genres).
    pub fn lookup_sum<F: Real>(&self, tape: &mut Tape<F>, bound: &Bound, bags: &[Vec<usize>]) -> Result<Var> {
        for &i in bags.iter().flatten() {
            self.check(i)?;
        }
        tape.gather_sum(bound.var(self.rows), bags)
    }
}

/// Affine layers with leaky ReLU between consecutive layers and no
/// activation after the last.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Affine>,
}

impl Mlp {
    /// `widths[0]` is the input width; each further entry adds a layer
    /// `{name}.{i}`.
    pub fn new<F: Real>(params: &mut ParameterSet<F>, name: &str, widths: &[usize], rng: &mut Rng) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Construction(format!("mlp `{name}` needs at least one layer")));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Affine::new(params, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect::<Result<_>>()?;
        Ok(Mlp { layers })
    }

    pub fn from_layers(layers: Vec<Affine>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Construction("mlp needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::dim(
                    "mlp chain",
                    &[pair[0].out_dim, pair[0].in_dim],
                    &[pair[1].out_dim, pair[1].in_dim],
                ));
            }
        }
        Ok(Mlp { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn forward<F: Real>(&self, tape: &mut Tape<F>, bound: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                h = tape.leaky_relu(h);
            }
            h = layer.forward(tape, bound, h)?;
        }
        Ok(h)
    }
}

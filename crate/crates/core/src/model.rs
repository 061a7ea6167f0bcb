//! The full rating model: feature embeddings, two link graphs, the place
//! graph and the rating head, plus a plain MLP baseline over the same
//! features.
//!
//! ```
//! use hbgnn::data::{build_vocabs, Dataset, DatasetKind, Movie, Rating, User};
//! use hbgnn::model::{Model, ModelConfig};
//!
//! let users = vec![User { id: "1".into(), age: 31, gender: "F".into(), occupation: "writer".into(), zip: "02139".into() }];
//! let movies = vec![Movie { id: "7".into(), genres: vec!["Comedy".into(), "Drama".into()] }];
//! let ratings = vec![Rating { user: 0, movie: 0, rating: 4.0, timestamp: 0 }];
//! let dataset = Dataset::new(DatasetKind::Ml100k, users, movies, ratings)?;
//!
//! let model = Model::<f32>::build(ModelConfig::reduced(), build_vocabs(&dataset)?)?;
//! let encoded = dataset.encode(model.vocabs())?;
//! let predictions = model.predict(&encoded, 256)?;
//! assert!(predictions[0].is_finite());
//! # Ok::<(), hbgnn::Error>(())
//! ```

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Real, Rng, Tape, Tensor, Var};
use crate::bigraph::{encapsulate, link_round, place_round, Attention, LinkGraph, PlaceGraph};
use crate::data::{EncodedExample, Vocabularies, AGE_SLOTS};
use crate::nn::{Bound, EmbeddingTable, GruCell, Mlp, ParameterSet};
use crate::{Error, Result};

/// Where identity embeddings enter the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// As nodes of the link graphs.
    Alpha,
    /// Added to the place-graph states after encapsulation.
    Beta,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Hbgnn,
    /// Concatenated embeddings straight into the rating head.
    Mlp,
}

/// Categorical inputs of one rating.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Feature {
    UserId,
    Age,
    Occupation,
    Zip,
    Gender,
    MovieId,
    Genre,
}

impl Feature {
    pub const ALL: [Feature; 7] = [
        Feature::UserId,
        Feature::Age,
        Feature::Occupation,
        Feature::Zip,
        Feature::Gender,
        Feature::MovieId,
        Feature::Genre,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::UserId => "user_id",
            Feature::Age => "age",
            Feature::Occupation => "occupation",
            Feature::Zip => "zip",
            Feature::Gender => "gender",
            Feature::MovieId => "movie_id",
            Feature::Genre => "genre",
        }
    }

    fn table_rows(self, vocabs: &Vocabularies) -> usize {
        match self {
            Feature::UserId => vocabs.user_id.len(),
            Feature::Age => AGE_SLOTS,
            Feature::Occupation => vocabs.occupation.len(),
            Feature::Zip => vocabs.zip.len(),
            Feature::Gender => vocabs.gender.len(),
            Feature::MovieId => vocabs.movie_id.len(),
            Feature::Genre => vocabs.genre.len(),
        }
    }

    fn index(self, ex: &EncodedExample) -> usize {
        match self {
            Feature::UserId => ex.user_id,
            Feature::Age => ex.age,
            Feature::Occupation => ex.occupation,
            Feature::Zip => ex.zip,
            Feature::Gender => ex.gender,
            Feature::MovieId => ex.movie_id,
            Feature::Genre => unreachable!("genre is multi-valued"),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Alpha => "alpha",
            Variant::Beta => "beta",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(Variant::Alpha),
            "beta" => Ok(Variant::Beta),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Hbgnn => "hbgnn",
            ModelKind::Mlp => "mlp",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hbgnn" => Ok(ModelKind::Hbgnn),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(Error::Config(format!("unknown model kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub variant: Variant,
    pub attention: bool,
    pub link_dim: usize,
    pub place_dim: usize,
    pub encoder_hidden: usize,
    /// Output widths of the five head layers; the last is 1.
    pub mlp_widths: Vec<usize>,
    pub rounds_link: usize,
    pub rounds_place: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Hbgnn,
            variant: Variant::Alpha,
            attention: false,
            link_dim: 512,
            place_dim: 2048,
            encoder_hidden: 4096,
            mlp_widths: vec![2048, 1024, 512, 256, 1],
            rounds_link: 1,
            rounds_place: 1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small dimensions that train on one CPU core in minutes.
    pub fn reduced() -> Self {
        ModelConfig {
            link_dim: 32,
            place_dim: 64,
            encoder_hidden: 128,
            mlp_widths: vec![128, 64, 32, 16, 1],
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mlp_widths.len() != 5 || self.mlp_widths.last() != Some(&1) {
            return Err(Error::Config(format!(
                "mlp_widths must list 5 layers ending at 1, got {:?}",
                self.mlp_widths
            )));
        }
        let dims = [self.link_dim, self.place_dim, self.encoder_hidden];
        if dims.contains(&0) || self.mlp_widths.contains(&0) {
            return Err(Error::Config("all dimensions must be positive".into()));
        }
        Ok(())
    }

    pub const KEYS: [&'static str; 10] = [
        "model",
        "variant",
        "attention",
        "link_dim",
        "place_dim",
        "encoder_hidden",
        "mlp_widths",
        "rounds_link",
        "rounds_place",
        "seed",
    ];

    /// `key=value` form, in [`ModelConfig::KEYS`] order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let widths: Vec<String> = self.mlp_widths.iter().map(usize::to_string).collect();
        vec![
            ("model", self.kind.to_string()),
            ("variant", self.variant.to_string()),
            ("attention", self.attention.to_string()),
            ("link_dim", self.link_dim.to_string()),
            ("place_dim", self.place_dim.to_string()),
            ("encoder_hidden", self.encoder_hidden.to_string()),
            ("mlp_widths", widths.join(",")),
            ("rounds_link", self.rounds_link.to_string()),
            ("rounds_place", self.rounds_place.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    /// Sets one field from its `key=value` form. Returns `false` for keys
    /// that are not model settings.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
        }
        match key {
            "model" => self.kind = value.parse()?,
            "variant" => self.variant = value.parse()?,
            "attention" => self.attention = num(key, value)?,
            "link_dim" => self.link_dim = num(key, value)?,
            "place_dim" => self.place_dim = num(key, value)?,
            "encoder_hidden" => self.encoder_hidden = num(key, value)?,
            "mlp_widths" => {
                self.mlp_widths = value
                    .split(',')
                    .map(|w| num(key, w))
                    .collect::<Result<_>>()?
            }
            "rounds_link" => self.rounds_link = num(key, value)?,
            "rounds_place" => self.rounds_place = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

#[derive(Clone, Debug)]
struct EntityGraph {
    nodes: Vec<(Feature, EmbeddingTable)>,
    cell: GruCell,
    attention: Option<Attention>,
    encoder: Mlp,
}

#[derive(Clone, Debug)]
struct HbgnnNet {
    user: EntityGraph,
    movie: EntityGraph,
    place_ids: Option<(EmbeddingTable, EmbeddingTable)>,
    place_cell: GruCell,
    head: Mlp,
}

#[derive(Clone, Debug)]
struct BaselineNet {
    tables: Vec<(Feature, EmbeddingTable)>,
    head: Mlp,
}

#[derive(Clone, Debug)]
enum Network {
    Hbgnn(HbgnnNet),
    Mlp(BaselineNet),
}

/// Tape outputs of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// `[batch, 1]` unclamped ratings.
    pub prediction: Var,
    /// User place-graph state after message passing; `None` for the baseline.
    pub user_state: Option<Var>,
}

/// A configured model with its vocabularies and parameters.
#[derive(Clone, Debug)]
pub struct Model<F> {
    config: ModelConfig,
    vocabs: Vocabularies,
    params: ParameterSet<F>,
    net: Network,
}

fn user_features(variant: Variant) -> &'static [Feature] {
    match variant {
        Variant::Alpha => &[Feature::UserId, Feature::Age, Feature::Occupation, Feature::Zip, Feature::Gender],
        Variant::Beta => &[Feature::Age, Feature::Occupation, Feature::Zip, Feature::Gender],
    }
}

fn movie_features(variant: Variant) -> &'static [Feature] {
    match variant {
        Variant::Alpha => &[Feature::MovieId, Feature::Genre],
        Variant::Beta => &[Feature::Genre],
    }
}

fn tables<F: Real>(
    params: &mut ParameterSet<F>,
    prefix: &str,
    features: &[Feature],
    vocabs: &Vocabularies,
    dim: usize,
    rng: &mut Rng,
) -> Result<Vec<(Feature, EmbeddingTable)>> {
    features
        .iter()
        .map(|&f| {
            let name = format!("{prefix}.embed.{}", f.name());
            Ok((f, EmbeddingTable::new(params, &name, f.table_rows(vocabs), dim, rng)?))
        })
        .collect()
}

fn entity<F: Real>(
    params: &mut ParameterSet<F>,
    prefix: &str,
    features: &[Feature],
    config: &ModelConfig,
    vocabs: &Vocabularies,
    rng: &mut Rng,
) -> Result<EntityGraph> {
    let d = config.link_dim;
    let nodes = tables(params, prefix, features, vocabs, d, rng)?;
    let cell = GruCell::new(params, &format!("{prefix}.gru"), d, d, rng)?;
    // A node with a single neighbour always gives it weight 1, so attention
    // only exists on graphs of three or more nodes.
    let attention = match config.attention && features.len() > 2 {
        true => Some(Attention::new(params, &format!("{prefix}.attention"), d, rng)?),
        false => None,
    };
    let encoder = Mlp::new(
        params,
        &format!("{prefix}.encoder"),
        &[features.len() * d, config.encoder_hidden, config.place_dim],
        rng,
    )?;
    Ok(EntityGraph {
        nodes,
        cell,
        attention,
        encoder,
    })
}

fn head_widths(input: usize, config: &ModelConfig) -> Vec<usize> {
    std::iter::once(input).chain(config.mlp_widths.iter().copied()).collect()
}

fn build_network<F: Real>(config: &ModelConfig, vocabs: &Vocabularies) -> Result<(ParameterSet<F>, Network)> {
    config.validate()?;
    let mut params = ParameterSet::new();
    let mut rng = Rng::new(config.seed);
    let net = match config.kind {
        ModelKind::Hbgnn => {
            let user = entity(&mut params, "user", user_features(config.variant), config, vocabs, &mut rng)?;
            let movie = entity(&mut params, "movie", movie_features(config.variant), config, vocabs, &mut rng)?;
            let place_ids = match config.variant {
                Variant::Alpha => None,
                Variant::Beta => {
                    let p = config.place_dim;
                    let mut ids = tables(&mut params, "place", &[Feature::UserId, Feature::MovieId], vocabs, p, &mut rng)?;
                    let movie_ids = ids.pop().expect("two tables").1;
                    Some((ids.pop().expect("two tables").1, movie_ids))
                }
            };
            let place_cell = GruCell::new(&mut params, "place.gru", config.place_dim, config.place_dim, &mut rng)?;
            let head = Mlp::new(&mut params, "head", &head_widths(2 * config.place_dim, config), &mut rng)?;
            Network::Hbgnn(HbgnnNet {
                user,
                movie,
                place_ids,
                place_cell,
                head,
            })
        }
        ModelKind::Mlp => {
            let tables = tables(&mut params, "baseline", &Feature::ALL, vocabs, config.link_dim, &mut rng)?;
            let input = Feature::ALL.len() * config.link_dim;
            let head = Mlp::new(&mut params, "baseline.mlp", &head_widths(input, config), &mut rng)?;
            Network::Mlp(BaselineNet { tables, head })
        }
    };
    Ok((params, net))
}

/// Looks up one feature for a whole batch.
fn embed<F: Real>(
    tape: &mut Tape<F>,
    bound: &Bound,
    feature: Feature,
    table: &EmbeddingTable,
    batch: &[&EncodedExample],
) -> Result<Var> {
    match feature {
        Feature::Genre => {
            let bags: Vec<Vec<usize>> = batch
                .iter()
                .map(|ex| {
                    let mut bag = ex.genres.clone();
                    bag.sort_unstable();
                    bag
                })
                .collect();
            table.lookup_sum(tape, bound, &bags)
        }
        f => {
            let indices: Vec<usize> = batch.iter().map(|ex| f.index(ex)).collect();
            table.lookup(tape, bound, &indices)
        }
    }
}

fn entity_state<F: Real>(
    tape: &mut Tape<F>,
    bound: &Bound,
    graph: &EntityGraph,
    rounds: usize,
    batch: &[&EncodedExample],
) -> Result<Var> {
    let features = graph
        .nodes
        .iter()
        .map(|(f, table)| Ok((f.name().to_owned(), embed(tape, bound, *f, table, batch)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut link = LinkGraph::assign_embeddings(tape, features)?;
    for _ in 0..rounds {
        link = link_round(tape, bound, &link, &graph.cell, graph.attention.as_ref())?.0;
    }
    encapsulate(tape, bound, &link, &graph.encoder)
}

/// Names of the tables whose rows depend on a particular dataset.
pub fn is_dataset_specific(name: &str) -> bool {
    [Feature::UserId, Feature::MovieId, Feature::Zip]
        .iter()
        .any(|f| name.ends_with(&format!(".embed.{}", f.name())))
}

impl<F: Real> Model<F> {
    /// Builds and initializes every tensor from `config.seed`.
    pub fn build(config: ModelConfig, vocabs: Vocabularies) -> Result<Self> {
        let (params, net) = build_network(&config, &vocabs)?;
        Ok(Model {
            config,
            vocabs,
            params,
            net,
        })
    }

    /// Reassembles a model from stored parameters, checking that every
    /// tensor the configuration needs is present with the right shape.
    pub fn from_parts(config: ModelConfig, vocabs: Vocabularies, params: ParameterSet<F>) -> Result<Self> {
        let (fresh, net) = build_network::<F>(&config, &vocabs)?;
        let mut problems = Vec::new();
        for (name, t) in fresh.iter() {
            match params.get(name) {
                None => problems.push(format!("{name}: missing")),
                Some(p) if p.shape() != t.shape() => {
                    problems.push(format!("{name}: shape {:?}, expected {:?}", p.shape(), t.shape()))
                }
                Some(_) => {}
            }
        }
        for name in params.names() {
            if fresh.id(name).is_none() {
                problems.push(format!("{name}: unexpected"));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Contract(format!("parameter mismatch: {}", problems.join("; "))));
        }
        // Re-register in canonical order so ids line up with the layout.
        let mut ordered = ParameterSet::new();
        for name in fresh.names() {
            ordered.insert(name, params.get(name).expect("checked").clone())?;
        }
        Ok(Model {
            config,
            vocabs,
            params: ordered,
            net,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocabs(&self) -> &Vocabularies {
        &self.vocabs
    }

    pub fn params(&self) -> &ParameterSet<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet<F> {
        &mut self.params
    }

    pub fn into_parts(self) -> (ModelConfig, Vocabularies, ParameterSet<F>) {
        (self.config, self.vocabs, self.params)
    }

    /// Same model with parameters converted to another precision.
    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            vocabs: self.vocabs.clone(),
            params: self.params.cast(),
            net: self.net.clone(),
        }
    }

    /// Records the forward pass for `batch` on `tape`.
    pub fn forward(&self, tape: &mut Tape<F>, bound: &Bound, batch: &[&EncodedExample]) -> Result<Forward> {
        if batch.is_empty() {
            return Err(Error::Domain("forward on an empty batch".into()));
        }
        match &self.net {
            Network::Hbgnn(net) => {
                let mut user = entity_state(tape, bound, &net.user, self.config.rounds_link, batch)?;
                let mut movie = entity_state(tape, bound, &net.movie, self.config.rounds_link, batch)?;
                if let Some((user_ids, movie_ids)) = &net.place_ids {
                    let u = embed(tape, bound, Feature::UserId, user_ids, batch)?;
                    let m = embed(tape, bound, Feature::MovieId, movie_ids, batch)?;
                    user = tape.add(user, u)?;
                    movie = tape.add(movie, m)?;
                }
                let mut place = PlaceGraph { user, item: movie };
                for _ in 0..self.config.rounds_place {
                    place = place_round(tape, bound, place, &net.place_cell)?;
                }
                let joined = tape.concat_cols(&[place.user, place.item])?;
                Ok(Forward {
                    prediction: net.head.forward(tape, bound, joined)?,
                    user_state: Some(place.user),
                })
            }
            Network::Mlp(net) => {
                let parts = net
                    .tables
                    .iter()
                    .map(|(f, table)| embed(tape, bound, *f, table, batch))
                    .collect::<Result<Vec<_>>>()?;
                let joined = tape.concat_cols(&parts)?;
                Ok(Forward {
                    prediction: net.head.forward(tape, bound, joined)?,
                    user_state: None,
                })
            }
        }
    }

    /// Unclamped predictions, evaluated `batch_size` examples at a time.
    pub fn predict(&self, examples: &[EncodedExample], batch_size: usize) -> Result<Vec<F>> {
        let mut out = Vec::with_capacity(examples.len());
        self.for_each_batch(examples, batch_size, |tape, fwd| {
            out.extend_from_slice(tape.value(fwd.prediction).data());
            Ok(())
        })?;
        Ok(out)
    }

    /// Predictions together with the user place-graph state of each example.
    pub fn predict_with_states(&self, examples: &[EncodedExample], batch_size: usize) -> Result<Vec<(F, Vec<F>)>> {
        let mut out = Vec::with_capacity(examples.len());
        self.for_each_batch(examples, batch_size, |tape, fwd| {
            let Some(state) = fwd.user_state else {
                return Err(Error::Contract("the baseline has no place-graph states".into()));
            };
            let states = tape.value(state);
            for (r, &p) in tape.value(fwd.prediction).data().iter().enumerate() {
                out.push((p, states.row(r).to_vec()));
            }
            Ok(())
        })?;
        Ok(out)
    }

    fn for_each_batch(
        &self,
        examples: &[EncodedExample],
        batch_size: usize,
        mut visit: impl FnMut(&Tape<F>, Forward) -> Result<()>,
    ) -> Result<()> {
        if batch_size == 0 {
            return Err(Error::Domain("batch size must be positive".into()));
        }
        for chunk in examples.chunks(batch_size) {
            let mut tape = Tape::new();
            let bound = self.params.bind(&mut tape);
            let batch: Vec<&EncodedExample> = chunk.iter().collect();
            let fwd = self.forward(&mut tape, &bound, &batch)?;
            visit(&tape, fwd)?;
        }
        Ok(())
    }
}

/// Targets of a batch as a `[batch, 1]` tensor.
pub fn targets<F: Real>(batch: &[&EncodedExample]) -> Result<Tensor<F>> {
    Tensor::new(
        &[batch.len(), 1],
        batch.iter().map(|ex| F::from_f64_lossy(f64::from(ex.rating))).collect(),
    )
}

#[cfg(test)]
mod tests;

use super::*;
use crate::data::{build_vocabs, Dataset, DatasetKind, Movie, Rating, User};
use crate::optim::rmse;

fn toy_dataset() -> Dataset {
    let user = |id: &str, age, gender: &str, occupation: &str, zip: &str| User {
        id: id.into(),
        age,
        gender: gender.into(),
        occupation: occupation.into(),
        zip: zip.into(),
    };
    let movie = |id: &str, genres: &[&str]| Movie {
        id: id.into(),
        genres: genres.iter().map(|g| g.to_string()).collect(),
    };
    let users = vec![
        user("1", 24, "M", "technician", "85711"),
        user("2", 53, "F", "other", "94043"),
        user("3", 7, "M", "student", "T8H1N"),
    ];
    let movies = vec![
        movie("10", &["Action", "Sci-Fi"]),
        movie("20", &["unknown"]),
        movie("30", &["Comedy", "Drama", "Romance"]),
    ];
    let ratings = [(0, 0, 4.0), (1, 2, 2.0), (2, 1, 5.0), (0, 2, 1.0), (2, 0, 3.0)]
        .iter()
        .enumerate()
        .map(|(t, &(user, movie, rating))| Rating {
            user,
            movie,
            rating,
            timestamp: t as i64,
        })
        .collect();
    Dataset::new(DatasetKind::Ml100k, users, movies, ratings).unwrap()
}

fn tiny(variant: Variant, attention: bool) -> ModelConfig {
    ModelConfig {
        variant,
        attention,
        link_dim: 2,
        place_dim: 2,
        encoder_hidden: 3,
        mlp_widths: vec![3, 2, 2, 2, 1],
        seed: 5,
        ..ModelConfig::default()
    }
}

fn randomize(params: &mut ParameterSet<f64>, seed: u64) {
    let mut rng = Rng::new(seed);
    for (_, t) in params.iter_mut() {
        for x in t.data_mut() {
            *x = rng.uniform(-1.0, 1.0);
        }
    }
}

/// Plain-loop re-implementation of the forward pass, reading parameters by name.
struct Oracle<'a> {
    p: &'a ParameterSet<f64>,
    config: &'a ModelConfig,
}

impl Oracle<'_> {
    fn t(&self, name: &str) -> &Tensor<f64> {
        self.p.get(name).unwrap_or_else(|| panic!("missing {name}"))
    }

    fn affine(&self, prefix: &str, x: &[f64]) -> Vec<f64> {
        let w = self.t(&format!("{prefix}.weight"));
        let b = self.t(&format!("{prefix}.bias"));
        let (out, inp) = (w.shape()[0], w.shape()[1]);
        assert_eq!(inp, x.len());
        (0..out).map(|o| b.data()[o] + (0..inp).map(|i| w.at(o, i) * x[i]).sum::<f64>()).collect()
    }

    fn mlp(&self, prefix: &str, layers: usize, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for l in 0..layers {
            if l > 0 {
                h = h.iter().map(|&v| if v > 0.0 { v } else { 0.01 * v }).collect();
            }
            h = self.affine(&format!("{prefix}.{l}"), &h);
        }
        h
    }

    fn gru(&self, prefix: &str, x: &[f64], h: &[f64]) -> Vec<f64> {
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let lin = |gate: &str, x: &[f64], h: &[f64], i: usize| {
            let w = self.t(&format!("{prefix}.w_{gate}"));
            let u = self.t(&format!("{prefix}.u_{gate}"));
            let b = self.t(&format!("{prefix}.b_{gate}"));
            b.data()[i]
                + (0..x.len()).map(|k| w.at(i, k) * x[k]).sum::<f64>()
                + (0..h.len()).map(|k| u.at(i, k) * h[k]).sum::<f64>()
        };
        let n = h.len();
        let r: Vec<f64> = (0..n).map(|i| sig(lin("r", x, h, i))).collect();
        let rh: Vec<f64> = (0..n).map(|i| r[i] * h[i]).collect();
        (0..n)
            .map(|i| {
                let z = sig(lin("z", x, h, i));
                let cand = lin("h", x, &rh, i).tanh();
                (1.0 - z) * h[i] + z * cand
            })
            .collect()
    }

    fn row(&self, table: &str, i: usize) -> Vec<f64> {
        self.t(table).row(i).to_vec()
    }

    fn entity(&self, prefix: &str, nodes: &[(&str, Vec<f64>)]) -> Vec<f64> {
        let mut states: Vec<Vec<f64>> = nodes.iter().map(|(_, s)| s.clone()).collect();
        let n = states.len();
        for _ in 0..self.config.rounds_link {
            let mut next = Vec::new();
            for i in 0..n {
                let others: Vec<usize> = (0..n).filter(|&k| k != i).collect();
                let weights: Vec<f64> = if self.config.attention && others.len() > 1 {
                    let key = self.affine(&format!("{prefix}.attention.key"), &states[i]);
                    let scores: Vec<f64> = others
                        .iter()
                        .map(|&k| {
                            let q = self.affine(&format!("{prefix}.attention.query"), &states[k]);
                            key.iter().zip(&q).map(|(a, b)| a * b).sum()
                        })
                        .collect();
                    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                    let total: f64 = exps.iter().sum();
                    exps.iter().map(|e| e / total).collect()
                } else {
                    vec![1.0; others.len()]
                };
                let mut message = vec![0.0; states[i].len()];
                for (w, &k) in weights.iter().zip(&others) {
                    for (m, s) in message.iter_mut().zip(&states[k]) {
                        *m += w * s;
                    }
                }
                next.push(self.gru(&format!("{prefix}.gru"), &message, &states[i]));
            }
            states = next;
        }
        let joined: Vec<f64> = states.concat();
        self.mlp(&format!("{prefix}.encoder"), 2, &joined)
    }

    fn predict(&self, ex: &EncodedExample) -> f64 {
        let alpha = self.config.variant == Variant::Alpha;
        let genre = {
            let mut sum = vec![0.0; self.config.link_dim];
            for &g in &ex.genres {
                for (s, v) in sum.iter_mut().zip(self.row("movie.embed.genre", g)) {
                    *s += v;
                }
            }
            sum
        };
        let mut user_nodes = vec![];
        if alpha {
            user_nodes.push(("user_id", self.row("user.embed.user_id", ex.user_id)));
        }
        user_nodes.push(("age", self.row("user.embed.age", ex.age)));
        user_nodes.push(("occupation", self.row("user.embed.occupation", ex.occupation)));
        user_nodes.push(("zip", self.row("user.embed.zip", ex.zip)));
        user_nodes.push(("gender", self.row("user.embed.gender", ex.gender)));
        let mut movie_nodes = vec![];
        if alpha {
            movie_nodes.push(("movie_id", self.row("movie.embed.movie_id", ex.movie_id)));
        }
        movie_nodes.push(("genre", genre));

        let mut nu = self.entity("user", &user_nodes);
        let mut ni = self.entity("movie", &movie_nodes);
        if !alpha {
            for (a, b) in nu.iter_mut().zip(self.row("place.embed.user_id", ex.user_id)) {
                *a += b;
            }
            for (a, b) in ni.iter_mut().zip(self.row("place.embed.movie_id", ex.movie_id)) {
                *a += b;
            }
        }
        for _ in 0..self.config.rounds_place {
            let u = self.gru("place.gru", &ni, &nu);
            let i = self.gru("place.gru", &nu, &ni);
            nu = u;
            ni = i;
        }
        let out = self.mlp("head", 5, &[nu, ni].concat());
        assert_eq!(out.len(), 1);
        out[0]
    }
}

fn predict_one(model: &Model<f64>, ex: &EncodedExample) -> f64 {
    model.predict(std::slice::from_ref(ex), 1).unwrap()[0]
}

#[test]
fn matches_scalar_oracle() {
    let ds = toy_dataset();
    let vocabs = build_vocabs(&ds).unwrap();
    let encoded = ds.encode(&vocabs).unwrap();
    for variant in [Variant::Alpha, Variant::Beta] {
        for attention in [false, true] {
            for rounds in [1, 2] {
                let config = ModelConfig {
                    rounds_link: rounds,
                    rounds_place: rounds,
                    ..tiny(variant, attention)
                };
                let mut model = Model::<f64>::build(config.clone(), vocabs.clone()).unwrap();
                randomize(model.params_mut(), 77);
                let oracle = Oracle {
                    p: model.params(),
                    config: &config,
                };
                let batched = model.predict(&encoded, 2).unwrap();
                for (ex, got) in encoded.iter().zip(batched) {
                    let want = oracle.predict(ex);
                    assert!((got - want).abs() < 1e-12, "{variant:?} attn={attention} r={rounds}: {got} vs {want}");
                }
            }
        }
    }
}

#[test]
fn link_graph_sizes_per_variant() {
    let vocabs = build_vocabs(&toy_dataset()).unwrap();
    let count = |model: &Model<f32>, prefix: &str| {
        model
            .params()
            .names()
            .filter(|n| n.starts_with(&format!("{prefix}.embed.")))
            .count()
    };
    let alpha = Model::<f32>::build(tiny(Variant::Alpha, false), vocabs.clone()).unwrap();
    assert_eq!((count(&alpha, "user"), count(&alpha, "movie")), (5, 2));
    assert_eq!(alpha.params().get("user.encoder.0.weight").unwrap().shape(), &[3, 10]);
    let beta = Model::<f32>::build(tiny(Variant::Beta, false), vocabs).unwrap();
    assert_eq!((count(&beta, "user"), count(&beta, "movie")), (4, 1));
    assert_eq!(beta.params().get("movie.encoder.0.weight").unwrap().shape(), &[3, 2]);
}

#[test]
fn variant_separation() {
    let vocabs = build_vocabs(&toy_dataset()).unwrap();
    let alpha = Model::<f32>::build(tiny(Variant::Alpha, true), vocabs.clone()).unwrap();
    assert!(alpha.params().names().all(|n| !n.starts_with("place.embed")));
    assert!(alpha.params().get("user.embed.user_id").is_some());
    let beta = Model::<f32>::build(tiny(Variant::Beta, true), vocabs).unwrap();
    assert!(beta.params().get("user.embed.user_id").is_none());
    assert!(beta.params().get("movie.embed.movie_id").is_none());
    assert_eq!(beta.params().get("place.embed.user_id").unwrap().shape(), &[3, 2]);
    assert_eq!(beta.params().get("place.embed.movie_id").unwrap().shape(), &[3, 2]);
}

#[test]
fn table_sizes_follow_vocabularies() {
    let vocabs = build_vocabs(&toy_dataset()).unwrap();
    let model = Model::<f32>::build(ModelConfig::reduced(), vocabs).unwrap();
    let shape = |n: &str| model.params().get(n).unwrap().shape().to_vec();
    assert_eq!(shape("user.embed.age"), vec![AGE_SLOTS, 32]);
    assert_eq!(shape("user.embed.user_id"), vec![3, 32]);
    assert_eq!(shape("movie.embed.genre"), vec![19, 32]);
    assert_eq!(shape("user.embed.gender"), vec![2, 32]);
    assert_eq!(shape("head.0.weight"), vec![128, 128]);
    assert_eq!(shape("head.4.weight"), vec![1, 16]);
}

#[test]
fn seeded_builds_are_bit_identical() {
    let vocabs = build_vocabs(&toy_dataset()).unwrap();
    let a = Model::<f32>::build(tiny(Variant::Alpha, true), vocabs.clone()).unwrap();
    let b = Model::<f32>::build(tiny(Variant::Alpha, true), vocabs.clone()).unwrap();
    assert!(a.params().bit_eq(b.params()));
    let c = Model::<f32>::build(ModelConfig { seed: 6, ..tiny(Variant::Alpha, true) }, vocabs).unwrap();
    assert!(!a.params().bit_eq(c.params()));
}

#[test]
fn forward_is_pure_and_finite() {
    let ds = toy_dataset();
    let vocabs = build_vocabs(&ds).unwrap();
    let encoded = ds.encode(&vocabs).unwrap();
    for kind in [ModelKind::Hbgnn, ModelKind::Mlp] {
        let model = Model::<f32>::build(ModelConfig { kind, ..ModelConfig::reduced() }, vocabs.clone()).unwrap();
        let first = model.predict(&encoded, 3).unwrap();
        let second = model.predict(&encoded, 3).unwrap();
        assert_eq!(first.len(), encoded.len());
        assert!(first.iter().zip(&second).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(first.iter().all(|p| p.is_finite()));
    }
}

#[test]
fn batching_does_not_change_predictions() {
    let ds = toy_dataset();
    let vocabs = build_vocabs(&ds).unwrap();
    let encoded = ds.encode(&vocabs).unwrap();
    let mut model = Model::<f64>::build(tiny(Variant::Alpha, true), vocabs).unwrap();
    randomize(model.params_mut(), 3);
    let whole = model.predict(&encoded, 5).unwrap();
    for (ex, w) in encoded.iter().zip(whole) {
        assert!((predict_one(&model, ex) - w).abs() < 1e-12);
    }
}

#[test]
fn genre_order_is_irrelevant() {
    let ds = toy_dataset();
    let vocabs = build_vocabs(&ds).unwrap();
    let mut ex = ds.encode(&vocabs).unwrap().remove(1);
    assert_eq!(ex.genres.len(), 3);
    let model = Model::<f32>::build(ModelConfig::reduced(), vocabs).unwrap();
    let base = model.predict(std::slice::from_ref(&ex), 1).unwrap()[0];
    ex.genres.reverse();
    let permuted = model.predict(std::slice::from_ref(&ex), 1).unwrap()[0];
    assert_eq!(base.to_bits(), permuted.to_bits());
}

#[test]
fn out_of_range_index_is_vocabulary_error() {
    let ds = toy_dataset();
    let vocabs = build_vocabs(&ds).unwrap();
    let mut ex = ds.encode(&vocabs).unwrap().remove(0);
    ex.zip = 99;
    let model = Model::<f32>::build(tiny(Variant::Alpha, false), vocabs).unwrap();
    match model.predict(&[ex], 1) {
        Err(Error::Vocabulary { table, index: 99, size: 3 }) => assert_eq!(table, "user.embed.zip"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn every_parameter_receives_gradient() {
    let ds = toy_dataset();
    let vocabs = build_vocabs(&ds).unwrap();
    let encoded = ds.encode(&vocabs).unwrap();
    for (kind, variant, attention) in [
        (ModelKind::Hbgnn, Variant::Alpha, false),
        (ModelKind::Hbgnn, Variant::Alpha, true),
        (ModelKind::Hbgnn, Variant::Beta, true),
        (ModelKind::Mlp, Variant::Alpha, false),
    ] {
        let config = ModelConfig {
            kind,
            ..tiny(variant, attention)
        };
        let mut model = Model::<f64>::build(config, vocabs.clone()).unwrap();
        randomize(model.params_mut(), 11);
        let mut tape = Tape::new();
        let bound = model.params().bind(&mut tape);
        let batch = [&encoded[0]];
        let fwd = model.forward(&mut tape, &bound, &batch).unwrap();
        let y = tape.constant(targets(&batch).unwrap());
        let loss = rmse(&mut tape, fwd.prediction, y).unwrap();
        let grads = bound.gradients(&tape.backward(loss).unwrap());
        for ((name, _), g) in model.params().iter().zip(&grads) {
            // A lone node's message is zero, so its input weights see no signal.
            if variant == Variant::Beta && name.starts_with("movie.gru.w_") {
                assert!(g.data().iter().all(|&v| v == 0.0));
                continue;
            }
            assert!(g.data().iter().any(|&v| v != 0.0), "{kind:?} {variant:?} {attention}: {name}");
        }
    }
}

#[test]
fn baseline_layout() {
    let vocabs = build_vocabs(&toy_dataset()).unwrap();
    let config = ModelConfig {
        kind: ModelKind::Mlp,
        ..ModelConfig::reduced()
    };
    let model = Model::<f32>::build(config, vocabs).unwrap();
    assert!(model.params().names().all(|n| n.starts_with("baseline.")));
    assert_eq!(model.params().get("baseline.mlp.0.weight").unwrap().shape(), &[128, 7 * 32]);
    assert_eq!(model.params().get("baseline.mlp.4.weight").unwrap().shape(), &[1, 16]);
}

#[test]
fn from_parts_checks_layout() {
    let vocabs = build_vocabs(&toy_dataset()).unwrap();
    let model = Model::<f32>::build(tiny(Variant::Alpha, false), vocabs).unwrap();
    let (config, vocabs, params) = model.clone().into_parts();
    let back = Model::from_parts(config.clone(), vocabs.clone(), params.clone()).unwrap();
    assert!(back.params().bit_eq(model.params()));

    let err = Model::from_parts(ModelConfig { attention: true, ..config }, vocabs, params).unwrap_err();
    let Error::Contract(msg) = err else { panic!() };
    assert!(msg.contains("user.attention.key.weight: missing"), "{msg}");
}

#[test]
fn dataset_specific_tables() {
    assert!(is_dataset_specific("user.embed.user_id"));
    assert!(is_dataset_specific("place.embed.movie_id"));
    assert!(is_dataset_specific("baseline.embed.zip"));
    assert!(!is_dataset_specific("user.embed.age"));
    assert!(!is_dataset_specific("user.gru.w_z"));
}

#[test]
fn config_pairs_round_trip() {
    let config = ModelConfig {
        kind: ModelKind::Mlp,
        variant: Variant::Beta,
        attention: true,
        seed: 99,
        ..ModelConfig::reduced()
    };
    let mut back = ModelConfig::default();
    for (k, v) in config.to_pairs() {
        assert!(back.set(k, &v).unwrap());
    }
    assert_eq!(back, config);
    assert!(!back.set("epochs", "3").unwrap());
    assert!(back.set("variant", "gamma").is_err());

    let bad = ModelConfig {
        mlp_widths: vec![4, 4, 4, 2],
        ..ModelConfig::default()
    };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
    let bad = ModelConfig {
        mlp_widths: vec![4, 4, 4, 4, 2],
        ..ModelConfig::default()
    };
    assert!(bad.validate().is_err());
}

//! MovieLens ratings, vocabularies and train/test splits.

mod movielens;
mod vocab;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::autodiff::Rng;
use crate::{Error, Result};

pub use movielens::{load, load_ml100k, load_ml1m, write_ml100k, write_ml1m, ML1M_OCCUPATIONS};
pub use vocab::{build_vocabs, EncodedExample, Vocabularies, Vocabulary, AGE_SLOTS};

/// The 19 genres of the 100K distribution, in its flag-column order.
pub const CANONICAL_GENRES: [&str; 19] = [
    "unknown",
    "Action",
    "Adventure",
    "Animation",
    "Children's",
    "Comedy",
    "Crime",
    "Documentary",
    "Drama",
    "Fantasy",
    "Film-Noir",
    "Horror",
    "Musical",
    "Mystery",
    "Romance",
    "Sci-Fi",
    "Thriller",
    "War",
    "Western",
];

pub fn genre_position(name: &str) -> Option<usize> {
    CANONICAL_GENRES.iter().position(|&g| g == name)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DatasetKind {
    Ml100k,
    Ml1m,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Ml100k => "ml100k",
            DatasetKind::Ml1m => "ml1m",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ml100k" => Ok(DatasetKind::Ml100k),
            "ml1m" => Ok(DatasetKind::Ml1m),
            other => Err(Error::Config(format!("unknown dataset kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct User {
    pub id: String,
    pub age: u32,
    pub gender: String,
    pub occupation: String,
    pub zip: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Movie {
    pub id: String,
    /// Canonical genre names, in [`CANONICAL_GENRES`] order.
    pub genres: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rating {
    pub user: usize,
    pub movie: usize,
    pub rating: f32,
    pub timestamp: i64,
}

/// One rating joined with its user's and movie's features.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatingExample<'a> {
    pub user_id: &'a str,
    pub age: u32,
    pub gender: &'a str,
    pub occupation: &'a str,
    pub zip: &'a str,
    pub movie_id: &'a str,
    pub genres: &'a [String],
    pub rating: f32,
    pub timestamp: i64,
}

/// Immutable ratings table with its user and movie records.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    kind: DatasetKind,
    source: Option<PathBuf>,
    users: Vec<User>,
    movies: Vec<Movie>,
    ratings: Vec<Rating>,
}

impl Dataset {
    /// Validates and assembles a dataset. `ratings` refer to `users` and
    /// `movies` by position.
    pub fn new(kind: DatasetKind, users: Vec<User>, movies: Vec<Movie>, ratings: Vec<Rating>) -> Result<Self> {
        let mut seen = HashSet::new();
        for u in &users {
            if !seen.insert(u.id.as_str()) {
                return Err(Error::Construction(format!("duplicate user id `{}`", u.id)));
            }
        }
        seen.clear();
        for m in &movies {
            if !seen.insert(m.id.as_str()) {
                return Err(Error::Construction(format!("duplicate movie id `{}`", m.id)));
            }
            if m.genres.is_empty() {
                return Err(Error::Construction(format!("movie `{}` has no genre", m.id)));
            }
            let mut last = None;
            for g in &m.genres {
                let Some(pos) = genre_position(g) else {
                    return Err(Error::Construction(format!("movie `{}` has unknown genre `{g}`", m.id)));
                };
                if last.is_some_and(|l| l >= pos) {
                    return Err(Error::Construction(format!("movie `{}` genres not canonical", m.id)));
                }
                last = Some(pos);
            }
        }
        for (i, r) in ratings.iter().enumerate() {
            if r.user >= users.len() || r.movie >= movies.len() {
                return Err(Error::Construction(format!("rating {i} refers to a missing user or movie")));
            }
            if !matches!(r.rating, 1.0 | 2.0 | 3.0 | 4.0 | 5.0) {
                return Err(Error::Construction(format!("rating {i} has value {}", r.rating)));
            }
        }
        Ok(Dataset {
            kind,
            source: None,
            users,
            movies,
            ratings,
        })
    }

    pub(crate) fn with_source(mut self, dir: &Path) -> Self {
        self.source = Some(dir.to_path_buf());
        self
    }

    pub fn kind(&self) -> DatasetKind {
        self.kind
    }

    /// Directory the dataset was loaded from, if any.
    pub fn source(&self) -> Option<&Path> {
        self.source.as_deref()
    }

    pub fn users(&self) -> &[User] {
        &self.users
    }

    pub fn movies(&self) -> &[Movie] {
        &self.movies
    }

    pub fn ratings(&self) -> &[Rating] {
        &self.ratings
    }

    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    pub fn example(&self, i: usize) -> RatingExample<'_> {
        let r = &self.ratings[i];
        let u = &self.users[r.user];
        let m = &self.movies[r.movie];
        RatingExample {
            user_id: &u.id,
            age: u.age,
            gender: &u.gender,
            occupation: &u.occupation,
            zip: &u.zip,
            movie_id: &m.id,
            genres: &m.genres,
            rating: r.rating,
            timestamp: r.timestamp,
        }
    }

    pub fn examples(&self) -> impl Iterator<Item = RatingExample<'_>> {
        (0..self.len()).map(|i| self.example(i))
    }

    /// Encodes every rating against `vocabs`.
    pub fn encode(&self, vocabs: &Vocabularies) -> Result<Vec<EncodedExample>> {
        self.examples().map(|ex| vocabs.encode(&ex)).collect()
    }

    /// Keeps the ratings at `indices` (ascending, duplicates removed) and
    /// only the users and movies they mention.
    pub fn restrict(&self, indices: &[usize]) -> Result<Dataset> {
        let mut keep: Vec<usize> = indices.to_vec();
        keep.sort_unstable();
        keep.dedup();
        if keep.last().is_some_and(|&i| i >= self.len()) {
            return Err(Error::Domain(format!("rating index out of range for {} ratings", self.len())));
        }
        let user_order: Vec<usize> = keep.iter().map(|&i| self.ratings[i].user).collect::<BTreeSet<_>>().into_iter().collect();
        let movie_order: Vec<usize> = keep.iter().map(|&i| self.ratings[i].movie).collect::<BTreeSet<_>>().into_iter().collect();
        let user_pos: HashMap<usize, usize> = user_order.iter().enumerate().map(|(n, &o)| (o, n)).collect();
        let movie_pos: HashMap<usize, usize> = movie_order.iter().enumerate().map(|(n, &o)| (o, n)).collect();
        let ratings = keep
            .iter()
            .map(|&i| {
                let r = self.ratings[i];
                Rating {
                    user: user_pos[&r.user],
                    movie: movie_pos[&r.movie],
                    ..r
                }
            })
            .collect();
        let mut out = Dataset::new(
            self.kind,
            user_order.iter().map(|&u| self.users[u].clone()).collect(),
            movie_order.iter().map(|&m| self.movies[m].clone()).collect(),
            ratings,
        )?;
        out.source = self.source.clone();
        Ok(out)
    }

    /// Uniform sample of `n` ratings without replacement.
    pub fn subsample(&self, n: usize, seed: u64) -> Result<Dataset> {
        self.restrict(&self.subsample_indices(n, seed)?)
    }

    /// The rating indices [`Dataset::subsample`] keeps, ascending; rating
    /// `j` of the subsample is rating `indices[j]` of `self`.
    pub fn subsample_indices(&self, n: usize, seed: u64) -> Result<Vec<usize>> {
        if n == 0 {
            return Err(Error::Domain("subsample of zero ratings".into()));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        if n < order.len() {
            Rng::derived(seed, "subsample").shuffle(&mut order);
            order.truncate(n);
            order.sort_unstable();
        }
        Ok(order)
    }
}

/// Disjoint train and test rating indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Split by time: the earliest `train_fraction` of ratings train, the rest test.
pub fn temporal_split(dataset: &Dataset, train_fraction: f64) -> Result<Split> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Domain(format!("train fraction {train_fraction} outside [0, 1]")));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.sort_by_key(|&i| {
        let r = dataset.ratings[i];
        (r.timestamp, r.user, r.movie, i)
    });
    let cut = (train_fraction * dataset.len() as f64).floor() as usize;
    let test = order.split_off(cut);
    Ok(Split { train: order, test })
}

/// The distribution's predefined fold `fold` (`u{fold}.base` / `u{fold}.test`).
pub fn fold_split(dataset: &Dataset, fold: usize) -> Result<Split> {
    if !(1..=5).contains(&fold) {
        return Err(Error::Domain(format!("fold {fold} outside 1..5")));
    }
    if dataset.kind != DatasetKind::Ml100k {
        return Err(Error::Contract("fold splits exist only for ml100k".into()));
    }
    let Some(dir) = dataset.source() else {
        return Err(Error::Contract("fold split needs a dataset loaded from disk".into()));
    };
    let user_pos: HashMap<&str, usize> = dataset.users.iter().enumerate().map(|(i, u)| (u.id.as_str(), i)).collect();
    let movie_pos: HashMap<&str, usize> = dataset.movies.iter().enumerate().map(|(i, m)| (m.id.as_str(), i)).collect();
    let mut by_key = HashMap::with_capacity(dataset.len());
    for (i, r) in dataset.ratings.iter().enumerate() {
        by_key.insert((r.user, r.movie, r.timestamp), i);
    }
    let mut used = vec![false; dataset.len()];
    let mut read = |name: String| -> Result<Vec<usize>> {
        let path = dir.join(name);
        let mut out = Vec::new();
        for (line, rec) in movielens::read_records(&path, "\t")? {
            let err = |message: String| Error::Parse {
                file: path.clone(),
                line,
                message,
            };
            if rec.len() != 4 {
                return Err(err(format!("expected 4 fields, got {}", rec.len())));
            }
            let user = *user_pos.get(rec[0].as_str()).ok_or_else(|| err(format!("unknown user `{}`", rec[0])))?;
            let movie = *movie_pos.get(rec[1].as_str()).ok_or_else(|| err(format!("unknown movie `{}`", rec[1])))?;
            let ts: i64 = rec[3].parse().map_err(|_| err(format!("bad timestamp `{}`", rec[3])))?;
            let i = *by_key
                .get(&(user, movie, ts))
                .ok_or_else(|| err("rating not present in the full ratings file".into()))?;
            if std::mem::replace(&mut used[i], true) {
                return Err(err("rating listed twice across the fold files".into()));
            }
            out.push(i);
        }
        Ok(out)
    };
    let train = read(format!("u{fold}.base"))?;
    let test = read(format!("u{fold}.test"))?;
    Ok(Split { train, test })
}

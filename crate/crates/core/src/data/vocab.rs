use std::collections::HashMap;

use super::{genre_position, Dataset, RatingExample, CANONICAL_GENRES};
use crate::{Error, Result};

/// Rows of the age table; ages are clamped into `0..AGE_SLOTS`.
pub const AGE_SLOTS: usize = 100;

/// Sorted, de-duplicated token list with a reverse index.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    name: String,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.tokens == other.tokens
    }
}

impl Vocabulary {
    pub fn from_tokens<S: AsRef<str>>(name: &str, tokens: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut tokens: Vec<String> = tokens.into_iter().map(|t| t.as_ref().to_owned()).collect();
        tokens.sort();
        tokens.dedup();
        Self::from_sorted(name, tokens)
    }

    /// Accepts a token list that is already strictly increasing.
    pub fn from_sorted(name: &str, tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Construction(format!("vocabulary `{name}` is empty")));
        }
        if tokens.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Construction(format!("vocabulary `{name}` is not strictly sorted")));
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Vocabulary {
            name: name.to_owned(),
            tokens,
            index,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, i: usize) -> Option<&str> {
        self.tokens.get(i).map(String::as_str)
    }

    pub fn index_of(&self, token: &str) -> Result<usize> {
        self.index.get(token).copied().ok_or_else(|| Error::UnknownToken {
            table: self.name.clone(),
            token: token.to_owned(),
        })
    }
}

/// One vocabulary per categorical feature.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabularies {
    pub user_id: Vocabulary,
    pub gender: Vocabulary,
    pub occupation: Vocabulary,
    pub zip: Vocabulary,
    pub movie_id: Vocabulary,
    pub genre: Vocabulary,
}

/// A rating with every feature replaced by its table index.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedExample {
    pub user_id: usize,
    pub age: usize,
    pub gender: usize,
    pub occupation: usize,
    pub zip: usize,
    pub movie_id: usize,
    /// Genre indices in ascending order.
    pub genres: Vec<usize>,
    pub rating: f32,
}

impl Vocabularies {
    pub const NAMES: [&'static str; 6] = ["user_id", "gender", "occupation", "zip", "movie_id", "genre"];

    pub fn iter(&self) -> impl Iterator<Item = &Vocabulary> {
        [
            &self.user_id,
            &self.gender,
            &self.occupation,
            &self.zip,
            &self.movie_id,
            &self.genre,
        ]
        .into_iter()
    }

    /// Reassembles from vocabularies in [`Vocabularies::NAMES`] order.
    pub fn from_list(list: Vec<Vocabulary>) -> Result<Self> {
        let names: Vec<&str> = list.iter().map(Vocabulary::name).collect();
        if names != Self::NAMES {
            return Err(Error::Contract(format!("vocabularies {names:?}, expected {:?}", Self::NAMES)));
        }
        let mut it = list.into_iter();
        let mut next = || it.next().expect("length checked");
        Ok(Vocabularies {
            user_id: next(),
            gender: next(),
            occupation: next(),
            zip: next(),
            movie_id: next(),
            genre: next(),
        })
    }

    pub fn encode(&self, ex: &RatingExample<'_>) -> Result<EncodedExample> {
        let mut genres = ex
            .genres
            .iter()
            .map(|g| self.genre.index_of(g))
            .collect::<Result<Vec<_>>>()?;
        genres.sort_unstable();
        genres.dedup();
        if genres.is_empty() {
            return Err(Error::Contract(format!("movie `{}` has no genre", ex.movie_id)));
        }
        Ok(EncodedExample {
            user_id: self.user_id.index_of(ex.user_id)?,
            age: (ex.age as usize).min(AGE_SLOTS - 1),
            gender: self.gender.index_of(ex.gender)?,
            occupation: self.occupation.index_of(ex.occupation)?,
            zip: self.zip.index_of(ex.zip)?,
            movie_id: self.movie_id.index_of(ex.movie_id)?,
            genres,
            rating: ex.rating,
        })
    }
}

/// Vocabularies over every user and movie of `dataset`. The genre
/// vocabulary is always the full canonical list.
pub fn build_vocabs(dataset: &Dataset) -> Result<Vocabularies> {
    let users = dataset.users();
    let movies = dataset.movies();
    debug_assert!(movies.iter().flat_map(|m| &m.genres).all(|g| genre_position(g).is_some()));
    Ok(Vocabularies {
        user_id: Vocabulary::from_tokens("user_id", users.iter().map(|u| &u.id))?,
        gender: Vocabulary::from_tokens("gender", users.iter().map(|u| &u.gender))?,
        occupation: Vocabulary::from_tokens("occupation", users.iter().map(|u| &u.occupation))?,
        zip: Vocabulary::from_tokens("zip", users.iter().map(|u| &u.zip))?,
        movie_id: Vocabulary::from_tokens("movie_id", movies.iter().map(|m| &m.id))?,
        genre: Vocabulary::from_tokens("genre", CANONICAL_GENRES)?,
    })
}

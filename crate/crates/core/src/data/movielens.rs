use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{genre_position, Dataset, DatasetKind, Movie, Rating, User, CANONICAL_GENRES};
use crate::{Error, Result};

/// Occupation names of the 1M distribution, indexed by their numeric code.
pub const ML1M_OCCUPATIONS: [&str; 21] = [
    "other",
    "academic/educator",
    "artist",
    "clerical/admin",
    "college/grad student",
    "customer service",
    "doctor/health care",
    "executive/managerial",
    "farmer",
    "homemaker",
    "K-12 student",
    "lawyer",
    "programmer",
    "retired",
    "sales/marketing",
    "scientist",
    "self-employed",
    "technician/engineer",
    "tradesman/craftsman",
    "unemployed",
    "writer",
];

/// Age-bracket codes of the 1M distribution; each is its bracket's lower bound.
const ML1M_AGE_CODES: [u32; 7] = [1, 18, 25, 35, 45, 50, 56];

type Records = Vec<(usize, Vec<String>)>;

/// Reads a Latin-1 text file into `(line number, fields)` pairs, skipping
/// blank lines.
pub(super) fn read_records(path: &Path, sep: &str) -> Result<Records> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text: String = bytes.iter().map(|&b| b as char).collect();
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r').split(sep).map(str::to_owned).collect()))
        .collect())
}

fn write_latin1(path: &Path, text: &str) -> Result<()> {
    let bytes = text
        .chars()
        .map(|c| u8::try_from(u32::from(c)).map_err(|_| Error::Domain(format!("`{c}` is not Latin-1"))))
        .collect::<Result<Vec<u8>>>()?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Ctx<'a> {
    path: &'a Path,
    line: usize,
}

impl Ctx<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            file: self.path.to_path_buf(),
            line: self.line,
            message: message.into(),
        }
    }

    fn num<T: std::str::FromStr>(&self, field: &str, what: &str) -> Result<T> {
        field.trim().parse().map_err(|_| self.err(format!("bad {what} `{field}`")))
    }

    fn arity(&self, rec: &[String], n: usize) -> Result<()> {
        if rec.len() == n {
            Ok(())
        } else {
            Err(self.err(format!("expected {n} fields, got {}", rec.len())))
        }
    }
}

fn parse_rating(ctx: &Ctx, field: &str) -> Result<f32> {
    let r: u8 = ctx.num(field, "rating")?;
    if !(1..=5).contains(&r) {
        return Err(ctx.err(format!("rating {r} outside 1..5")));
    }
    Ok(f32::from(r))
}

fn index_by_id<T>(items: &[T], id: impl Fn(&T) -> &str) -> HashMap<String, usize> {
    items.iter().enumerate().map(|(i, t)| (id(t).to_owned(), i)).collect()
}

fn ratings_from(
    path: &Path,
    records: Records,
    arity: usize,
    users: &HashMap<String, usize>,
    movies: &HashMap<String, usize>,
) -> Result<Vec<Rating>> {
    let mut out = Vec::with_capacity(records.len());
    for (line, rec) in records {
        let ctx = Ctx { path, line };
        ctx.arity(&rec, arity)?;
        let user = *users.get(&rec[0]).ok_or_else(|| ctx.err(format!("unknown user `{}`", rec[0])))?;
        let movie = *movies.get(&rec[1]).ok_or_else(|| ctx.err(format!("unknown movie `{}`", rec[1])))?;
        out.push(Rating {
            user,
            movie,
            rating: parse_rating(&ctx, &rec[2])?,
            timestamp: ctx.num(&rec[3], "timestamp")?,
        });
    }
    Ok(out)
}

fn finish(kind: DatasetKind, dir: &Path, users: Vec<User>, movies: Vec<Movie>, ratings: Vec<Rating>) -> Result<Dataset> {
    Ok(Dataset::new(kind, users, movies, ratings)?.with_source(dir))
}

/// Loads `u.data`, `u.user` and `u.item` from a 100K distribution directory.
pub fn load_ml100k(dir: &Path) -> Result<Dataset> {
    let user_path = dir.join("u.user");
    let mut users = Vec::new();
    for (line, rec) in read_records(&user_path, "|")? {
        let ctx = Ctx { path: &user_path, line };
        ctx.arity(&rec, 5)?;
        users.push(User {
            id: rec[0].clone(),
            age: ctx.num(&rec[1], "age")?,
            gender: rec[2].clone(),
            occupation: rec[3].clone(),
            zip: rec[4].clone(),
        });
    }

    let item_path = dir.join("u.item");
    let mut movies = Vec::new();
    for (line, rec) in read_records(&item_path, "|")? {
        let ctx = Ctx { path: &item_path, line };
        ctx.arity(&rec, 5 + CANONICAL_GENRES.len())?;
        let mut genres = Vec::new();
        for (flag, name) in rec[5..].iter().zip(CANONICAL_GENRES) {
            match flag.trim() {
                "1" => genres.push(name.to_owned()),
                "0" => {}
                other => return Err(ctx.err(format!("genre flag `{other}` is not 0 or 1"))),
            }
        }
        if genres.is_empty() {
            genres.push(CANONICAL_GENRES[0].to_owned());
        }
        movies.push(Movie {
            id: rec[0].clone(),
            genres,
        });
    }

    let data_path = dir.join("u.data");
    let ratings = ratings_from(
        &data_path,
        read_records(&data_path, "\t")?,
        4,
        &index_by_id(&users, |u| &u.id),
        &index_by_id(&movies, |m| &m.id),
    )?;
    finish(DatasetKind::Ml100k, dir, users, movies, ratings)
}

/// Loads `ratings.dat`, `users.dat` and `movies.dat` from a 1M distribution
/// directory. Occupation codes become their names; age codes are kept.
pub fn load_ml1m(dir: &Path) -> Result<Dataset> {
    let user_path = dir.join("users.dat");
    let mut users = Vec::new();
    for (line, rec) in read_records(&user_path, "::")? {
        let ctx = Ctx { path: &user_path, line };
        ctx.arity(&rec, 5)?;
        let age: u32 = ctx.num(&rec[2], "age code")?;
        if !ML1M_AGE_CODES.contains(&age) {
            return Err(ctx.err(format!("unknown age code {age}")));
        }
        let code: usize = ctx.num(&rec[3], "occupation code")?;
        let occupation = ML1M_OCCUPATIONS
            .get(code)
            .ok_or_else(|| ctx.err(format!("unknown occupation code {code}")))?;
        users.push(User {
            id: rec[0].clone(),
            age,
            gender: rec[1].clone(),
            occupation: (*occupation).to_owned(),
            zip: rec[4].clone(),
        });
    }

    let movie_path = dir.join("movies.dat");
    let mut movies = Vec::new();
    for (line, rec) in read_records(&movie_path, "::")? {
        let ctx = Ctx { path: &movie_path, line };
        ctx.arity(&rec, 3)?;
        let mut positions = rec[2]
            .split('|')
            .map(|g| genre_position(g.trim()).ok_or_else(|| ctx.err(format!("unknown genre `{g}`"))))
            .collect::<Result<Vec<_>>>()?;
        positions.sort_unstable();
        positions.dedup();
        movies.push(Movie {
            id: rec[0].clone(),
            genres: positions.into_iter().map(|p| CANONICAL_GENRES[p].to_owned()).collect(),
        });
    }

    let ratings_path = dir.join("ratings.dat");
    let ratings = ratings_from(
        &ratings_path,
        read_records(&ratings_path, "::")?,
        4,
        &index_by_id(&users, |u| &u.id),
        &index_by_id(&movies, |m| &m.id),
    )?;
    finish(DatasetKind::Ml1m, dir, users, movies, ratings)
}

/// Loads either distribution.
pub fn load(kind: DatasetKind, dir: &Path) -> Result<Dataset> {
    match kind {
        DatasetKind::Ml100k => load_ml100k(dir),
        DatasetKind::Ml1m => load_ml1m(dir),
    }
}

fn create_dir(dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir.to_path_buf())
}

/// Writes `dataset` in the 100K layout. Titles and dates are left blank.
pub fn write_ml100k(dataset: &Dataset, dir: &Path) -> Result<()> {
    let dir = create_dir(dir)?;
    let mut users = String::new();
    for u in dataset.users() {
        writeln!(users, "{}|{}|{}|{}|{}", u.id, u.age, u.gender, u.occupation, u.zip).expect("string write");
    }
    let mut items = String::new();
    for m in dataset.movies() {
        let flags: Vec<&str> = CANONICAL_GENRES
            .iter()
            .map(|g| if m.genres.iter().any(|x| x == g) { "1" } else { "0" })
            .collect();
        writeln!(items, "{}|||||{}", m.id, flags.join("|")).expect("string write");
    }
    let mut data = String::new();
    for r in dataset.ratings() {
        let (u, m) = (&dataset.users()[r.user], &dataset.movies()[r.movie]);
        writeln!(data, "{}\t{}\t{}\t{}", u.id, m.id, r.rating, r.timestamp).expect("string write");
    }
    write_latin1(&dir.join("u.user"), &users)?;
    write_latin1(&dir.join("u.item"), &items)?;
    write_latin1(&dir.join("u.data"), &data)
}

/// Writes `dataset` in the 1M layout. Occupations must be 1M names.
pub fn write_ml1m(dataset: &Dataset, dir: &Path) -> Result<()> {
    let dir = create_dir(dir)?;
    let mut users = String::new();
    for u in dataset.users() {
        let code = ML1M_OCCUPATIONS
            .iter()
            .position(|&o| o == u.occupation)
            .ok_or_else(|| Error::Domain(format!("occupation `{}` has no 1M code", u.occupation)))?;
        writeln!(users, "{}::{}::{}::{}::{}", u.id, u.gender, u.age, code, u.zip).expect("string write");
    }
    let mut movies = String::new();
    for m in dataset.movies() {
        writeln!(movies, "{}::Movie {}::{}", m.id, m.id, m.genres.join("|")).expect("string write");
    }
    let mut ratings = String::new();
    for r in dataset.ratings() {
        let (u, m) = (&dataset.users()[r.user], &dataset.movies()[r.movie]);
        writeln!(ratings, "{}::{}::{}::{}", u.id, m.id, r.rating, r.timestamp).expect("string write");
    }
    write_latin1(&dir.join("users.dat"), &users)?;
    write_latin1(&dir.join("movies.dat"), &movies)?;
    write_latin1(&dir.join("ratings.dat"), &ratings)
}

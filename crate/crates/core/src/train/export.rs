use std::fmt::Write as _;
use std::path::Path;

use super::write_atomic;
use crate::autodiff::Real;
use crate::data::Dataset;
use crate::model::Model;
use crate::{Error, Result};

/// Writes one tab-separated row per rating in `indices`: the identifiers,
/// the observed and predicted rating, then the user place-graph state.
/// Returns the number of data rows.
pub fn export_embeddings<F: Real>(model: &Model<F>, dataset: &Dataset, indices: &[usize], path: &Path) -> Result<usize> {
    if let Some(&bad) = indices.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::Domain(format!("rating index {bad} out of range")));
    }
    let encoded = indices
        .iter()
        .map(|&i| model.vocabs().encode(&dataset.example(i)))
        .collect::<Result<Vec<_>>>()?;
    let rows = model.predict_with_states(&encoded, 1024)?;

    let mut out = String::from("user_id\tmovie_id\trating\tpredicted");
    for k in 0..model.config().place_dim {
        write!(out, "\tn_u_{k}").expect("string write");
    }
    out.push('\n');
    for (&i, (prediction, state)) in indices.iter().zip(&rows) {
        let ex = dataset.example(i);
        write!(out, "{}\t{}\t{}\t{}", ex.user_id, ex.movie_id, ex.rating, prediction).expect("string write");
        for v in state {
            write!(out, "\t{v}").expect("string write");
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())?;
    Ok(rows.len())
}

//! On-disk model snapshots.
//!
//! ```text
//! HBGNN-CKPT <version>
//! config <n>
//! key=value                      (n lines)
//! vocab <name> <n>
//! token                          (n lines, one block per vocabulary)
//! tensors <n>
//! tensor <name> <d0>x<d1>...
//! <numel little-endian f32>\n    (one block per tensor)
//! optimizer none | optimizer <step> <n>
//! key=value                      (hyperparameters)
//! moment <name>
//! <m><v><v_max> as f32 LE>\n     (one block per tensor)
//! end
//! sha256 <hex of every preceding byte>
//! ```

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::write_atomic;
use crate::autodiff::{Real, Tensor};
use crate::data::{Vocabularies, Vocabulary};
use crate::model::{Model, ModelConfig};
use crate::nn::ParameterSet;
use crate::optim::{AmsGradConfig, Moments, OptimizerState};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "HBGNN-CKPT";
const DIGEST_PREFIX: &[u8] = b"sha256 ";
const DIGEST_LINE: usize = DIGEST_PREFIX.len() + 64 + 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocabs: Vocabularies,
    pub params: ParameterSet<f32>,
    pub optimizer: Option<OptimizerState<f32>>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(64), |mut s, b| {
        write!(s, "{b:02x}").expect("string write");
        s
    })
}

fn push_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn optimizer_pairs(c: &AmsGradConfig) -> [(&'static str, f64); 5] {
    [
        ("lr", c.lr),
        ("beta1", c.beta1),
        ("beta2", c.beta2),
        ("eps", c.eps),
        ("weight_decay", c.weight_decay),
    ]
}

impl Checkpoint {
    pub fn from_model(model: &Model<f32>, optimizer: Option<&OptimizerState<f32>>) -> Self {
        Checkpoint {
            config: model.config().clone(),
            vocabs: model.vocabs().clone(),
            params: model.params().clone(),
            optimizer: optimizer.cloned(),
        }
    }

    pub fn to_model(&self) -> Result<Model<f32>> {
        Model::from_parts(self.config.clone(), self.vocabs.clone(), self.params.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut head = format!("{MAGIC} {FORMAT_VERSION}\n");
        let pairs = self.config.to_pairs();
        writeln!(head, "config {}", pairs.len()).expect("string write");
        for (k, v) in pairs {
            writeln!(head, "{k}={v}").expect("string write");
        }
        for vocab in self.vocabs.iter() {
            writeln!(head, "vocab {} {}", vocab.name(), vocab.len()).expect("string write");
            for token in vocab.tokens() {
                if token.contains('\n') || token.contains('\r') {
                    return Err(Error::Format(format!("token {token:?} contains a line break")));
                }
                writeln!(head, "{token}").expect("string write");
            }
        }
        writeln!(head, "tensors {}", self.params.len()).expect("string write");
        let mut out = head.into_bytes();

        for (name, t) in self.params.iter() {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            out.extend_from_slice(format!("tensor {name} {}\n", dims.join("x")).as_bytes());
            push_f32s(&mut out, t.data());
            out.push(b'\n');
        }

        match &self.optimizer {
            None => out.extend_from_slice(b"optimizer none\n"),
            Some(state) => {
                if state.moments.len() != self.params.len() {
                    return Err(Error::Contract("optimizer state does not match the parameters".into()));
                }
                out.extend_from_slice(format!("optimizer {} {}\n", state.step, state.moments.len()).as_bytes());
                for (k, v) in optimizer_pairs(&state.config) {
                    out.extend_from_slice(format!("{k}={v}\n").as_bytes());
                }
                for ((name, t), mo) in self.params.iter().zip(&state.moments) {
                    if mo.m.len() != t.numel() {
                        return Err(Error::Contract(format!("moment buffers of `{name}` have wrong length")));
                    }
                    out.extend_from_slice(format!("moment {name}\n").as_bytes());
                    push_f32s(&mut out, &mo.m);
                    push_f32s(&mut out, &mo.v);
                    push_f32s(&mut out, &mo.v_max);
                    out.push(b'\n');
                }
            }
        }
        out.extend_from_slice(b"end\n");
        let digest = hex(&Sha256::digest(&out));
        out.extend_from_slice(DIGEST_PREFIX);
        out.extend_from_slice(digest.as_bytes());
        out.push(b'\n');
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let first_line = bytes.split(|&b| b == b'\n').next().unwrap_or_default();
        let first_line = std::str::from_utf8(first_line).map_err(|_| Error::Format("not a checkpoint".into()))?;
        match first_line.split_once(' ') {
            Some((MAGIC, v)) if v == FORMAT_VERSION.to_string() => {}
            Some((MAGIC, v)) => {
                return Err(Error::Format(format!(
                    "checkpoint format version {v}, this build reads {FORMAT_VERSION}"
                )))
            }
            _ => return Err(Error::Format("not a checkpoint".into())),
        }

        if bytes.len() < DIGEST_LINE || !bytes.ends_with(b"\n") {
            return Err(Error::Integrity("file is truncated".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - DIGEST_LINE);
        if !tail.starts_with(DIGEST_PREFIX) {
            return Err(Error::Integrity("checksum line missing; file is truncated".into()));
        }
        let stored = &tail[DIGEST_PREFIX.len()..DIGEST_LINE - 1];
        if stored != hex(&Sha256::digest(body)).as_bytes() {
            return Err(Error::Integrity("checksum mismatch".into()));
        }
        Reader { bytes: body, pos: 0 }.checkpoint()
    }

    /// Writes atomically: on error no file appears at `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

fn bad(message: impl Into<String>) -> Error {
    Error::Format(message.into())
}

impl Reader<'_> {
    fn line(&mut self) -> Result<&str> {
        let rest = &self.bytes[self.pos..];
        let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("unexpected end of header"))?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| bad("header is not UTF-8"))
    }

    fn tagged<'s>(&'s mut self, tag: &str) -> Result<Vec<&'s str>> {
        let line = self.line()?;
        let mut parts = line.split(' ');
        if parts.next() != Some(tag) {
            return Err(bad(format!("expected `{tag}`, found `{line}`")));
        }
        Ok(parts.collect())
    }

    fn count(field: Option<&&str>) -> Result<usize> {
        field
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| bad("bad count"))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f32>> {
        let len = n.checked_mul(4).ok_or_else(|| bad("tensor too large"))?;
        let chunk = self.bytes.get(self.pos..self.pos + len).ok_or_else(|| bad("tensor data cut short"))?;
        self.pos += len;
        Ok(chunk
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn newline(&mut self) -> Result<()> {
        if self.bytes.get(self.pos) != Some(&b'\n') {
            return Err(bad("missing block terminator"));
        }
        self.pos += 1;
        Ok(())
    }

    fn checkpoint(mut self) -> Result<Checkpoint> {
        self.line()?;
        let n = Self::count(self.tagged("config")?.first())?;
        let mut config = ModelConfig::default();
        for _ in 0..n {
            let line = self.line()?.to_owned();
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("bad config line `{line}`")))?;
            if !config.set(k, v)? {
                return Err(bad(format!("unknown config key `{k}`")));
            }
        }
        config.validate()?;

        let mut vocabs = Vec::new();
        for _ in 0..Vocabularies::NAMES.len() {
            let parts = self.tagged("vocab")?;
            let name = parts.first().ok_or_else(|| bad("vocabulary without a name"))?.to_string();
            let n = Self::count(parts.get(1))?;
            let tokens = (0..n).map(|_| self.line().map(str::to_owned)).collect::<Result<Vec<_>>>()?;
            vocabs.push(Vocabulary::from_sorted(&name, tokens)?);
        }
        let vocabs = Vocabularies::from_list(vocabs)?;

        let n = Self::count(self.tagged("tensors")?.first())?;
        let mut params = ParameterSet::new();
        for _ in 0..n {
            let parts = self.tagged("tensor")?;
            let (Some(name), Some(dims)) = (parts.first(), parts.get(1)) else {
                return Err(bad("bad tensor header"));
            };
            let name = name.to_string();
            let shape = dims
                .split('x')
                .map(|d| d.parse::<usize>().map_err(|_| bad(format!("bad shape `{dims}`"))))
                .collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| bad("shape overflow"))?;
            let data = self.floats(numel)?;
            self.newline()?;
            params
                .insert(name, Tensor::new(&shape, data).map_err(|e| bad(e.to_string()))?)
                .map_err(|e| bad(e.to_string()))?;
        }

        let parts = self.tagged("optimizer")?;
        let optimizer = match parts.as_slice() {
            ["none"] => None,
            [step, count] => {
                let step: u64 = step.parse().map_err(|_| bad("bad optimizer step"))?;
                let count: usize = count.parse().map_err(|_| bad("bad moment count"))?;
                if count != params.len() {
                    return Err(bad("optimizer state does not match the tensors"));
                }
                let mut c = AmsGradConfig::default();
                for (key, _) in optimizer_pairs(&c) {
                    let line = self.line()?.to_owned();
                    let value = line
                        .strip_prefix(key)
                        .and_then(|r| r.strip_prefix('='))
                        .and_then(|v| v.parse::<f64>().ok())
                        .ok_or_else(|| bad(format!("expected `{key}=`, found `{line}`")))?;
                    match key {
                        "lr" => c.lr = value,
                        "beta1" => c.beta1 = value,
                        "beta2" => c.beta2 = value,
                        "eps" => c.eps = value,
                        _ => c.weight_decay = value,
                    }
                }
                let mut moments = Vec::with_capacity(count);
                let names: Vec<(String, usize)> = params.iter().map(|(n, t)| (n.to_owned(), t.numel())).collect();
                for (name, numel) in names {
                    let parts = self.tagged("moment")?;
                    if parts.first() != Some(&name.as_str()) {
                        return Err(bad(format!("moment block out of order at `{name}`")));
                    }
                    let m = self.floats(numel)?;
                    let v = self.floats(numel)?;
                    let v_max = self.floats(numel)?;
                    self.newline()?;
                    moments.push(Moments { m, v, v_max });
                }
                Some(OptimizerState {
                    config: c,
                    step,
                    moments,
                })
            }
            _ => return Err(bad("bad optimizer header")),
        };
        if self.line()? != "end" || self.pos != self.bytes.len() {
            return Err(bad("trailing data after the last block"));
        }
        Ok(Checkpoint {
            config,
            vocabs,
            params,
            optimizer,
        })
    }
}

impl<F: Real> Model<F> {
    /// Single-precision snapshot of this model.
    pub fn checkpoint(&self, optimizer: Option<&OptimizerState<f32>>) -> Checkpoint {
        Checkpoint {
            config: self.config().clone(),
            vocabs: self.vocabs().clone(),
            params: self.params().cast(),
            optimizer: optimizer.cloned(),
        }
    }
}

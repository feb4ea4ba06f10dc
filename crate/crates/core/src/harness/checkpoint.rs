//! Versioned text checkpoints.
//!
//! Weights are written as the 16-digit hex encoding of each f64's bit
//! pattern, so a load reproduces the saved model bit for bit on any
//! platform. The header carries the seed and config hash that produced the
//! model, purely as provenance; loading never replays them.
//!
//! Layout (one token group per line):
//!
//! ```text
//! simprov-checkpoint v1
//! config_hash <64 hex chars or ->
//! seed <u64>
//! n_classes <usize>
//! activation <relu|tanh|identity>
//! dropout <16 hex chars>
//! layers <L>
//! layer <index> <in> <out>
//! <in lines of out hex words>      weight rows
//! <one line of out hex words>      bias
//! ...
//! end
//! ```

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{Activation, Layer, MlpModel};

const MAGIC: &str = "simprov-checkpoint v1";

/// Provenance recorded alongside the weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub seed: u64,
    /// Hash of the config that produced the model; empty when saved outside
    /// an experiment run.
    pub config_hash: String,
}

fn hex_f64(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

fn checkpoint_to_string(model: &MlpModel, meta: &CheckpointMeta) -> String {
    let mut s = String::new();
    s.push_str(MAGIC);
    s.push('\n');
    let hash = if meta.config_hash.is_empty() {
        "-"
    } else {
        meta.config_hash.as_str()
    };
    s.push_str(&format!("config_hash {hash}\n"));
    s.push_str(&format!("seed {}\n", meta.seed));
    s.push_str(&format!("n_classes {}\n", model.n_classes()));
    s.push_str(&format!("activation {}\n", model.activation().name()));
    s.push_str(&format!("dropout {}\n", hex_f64(model.dropout_rate())));
    s.push_str(&format!("layers {}\n", model.layers().len()));
    for (l, layer) in model.layers().iter().enumerate() {
        let (din, dout) = (layer.in_dim(), layer.out_dim());
        s.push_str(&format!("layer {l} {din} {dout}\n"));
        for i in 0..din {
            let row: Vec<String> = layer.weights.row(i).iter().map(|&v| hex_f64(v)).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        let bias: Vec<String> = layer.bias.iter().map(|&v| hex_f64(v)).collect();
        s.push_str(&bias.join(" "));
        s.push('\n');
    }
    s.push_str("end\n");
    s
}

/// Writes atomically: a sibling temp file, then rename, so a crash mid-write
/// can never leave a half-written checkpoint at `path`. Checkpoint files are
/// single-writer (each trial owns its directory), so the fixed temp suffix
/// cannot collide.
pub fn save_checkpoint_meta(model: &MlpModel, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(checkpoint_to_string(model, meta).as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_checkpoint(model: &MlpModel, path: &Path) -> Result<()> {
    let meta = CheckpointMeta {
        seed: 0,
        config_hash: String::new(),
    };
    save_checkpoint_meta(model, &meta, path)
}

struct Lines<'a> {
    path: String,
    consumed: usize,
    iter: std::str::Lines<'a>,
}

impl<'a> Lines<'a> {
    fn next(&mut self, want: &str) -> Result<(usize, &'a str)> {
        match self.iter.next() {
            Some(line) => {
                self.consumed += 1;
                Ok((self.consumed, line))
            }
            None => Err(Error::Parse {
                path: self.path.clone(),
                line: self.consumed + 1,
                msg: format!("file truncated, expected {want}"),
            }),
        }
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            msg: msg.into(),
        }
    }
}

fn parse_kv<'a>(lines: &mut Lines<'a>, key: &str) -> Result<(usize, &'a str)> {
    let (n, line) = lines.next(key)?;
    match line.split_once(' ') {
        Some((k, v)) if k == key => Ok((n, v)),
        _ => Err(lines.err(n, format!("expected {key:?} entry, got {line:?}"))),
    }
}

fn parse_hex_row(lines: &mut Lines<'_>, expected: usize, what: &str) -> Result<Vec<f64>> {
    let (n, line) = lines.next(what)?;
    let mut out = Vec::with_capacity(expected);
    for tok in line.split_whitespace() {
        let bits = u64::from_str_radix(tok, 16)
            .map_err(|_| lines.err(n, format!("bad hex value {tok:?} in {what}")))?;
        out.push(f64::from_bits(bits));
    }
    if out.len() != expected {
        return Err(lines.err(
            n,
            format!("{what} has {} values, expected {expected}", out.len()),
        ));
    }
    Ok(out)
}

/// Loads a checkpoint plus its provenance header. Any structural defect
/// fails before a model is constructed; there is no partial result.
pub fn load_checkpoint_meta(path: &Path) -> Result<(MlpModel, CheckpointMeta)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = Lines {
        path: path.display().to_string(),
        consumed: 0,
        iter: text.lines(),
    };

    let (n, magic) = lines.next("schema header")?;
    if magic != MAGIC {
        return Err(Error::Schema(format!(
            "unsupported checkpoint header {magic:?} (expected {MAGIC:?})"
        )));
    }
    let _ = n;
    let (_, hash) = parse_kv(&mut lines, "config_hash")?;
    let config_hash = if hash == "-" {
        String::new()
    } else {
        hash.to_string()
    };
    let (n, seed_s) = parse_kv(&mut lines, "seed")?;
    let seed: u64 = seed_s
        .parse()
        .map_err(|_| lines.err(n, format!("bad seed {seed_s:?}")))?;
    let (n, k_s) = parse_kv(&mut lines, "n_classes")?;
    let n_classes: usize = k_s
        .parse()
        .map_err(|_| lines.err(n, format!("bad n_classes {k_s:?}")))?;
    let (n, act_s) = parse_kv(&mut lines, "activation")?;
    let activation =
        Activation::from_name(act_s).map_err(|_| lines.err(n, format!("bad activation {act_s:?}")))?;
    let (n, drop_s) = parse_kv(&mut lines, "dropout")?;
    let dropout_bits = u64::from_str_radix(drop_s, 16)
        .map_err(|_| lines.err(n, format!("bad dropout bits {drop_s:?}")))?;
    let dropout_rate = f64::from_bits(dropout_bits);
    let (n, layers_s) = parse_kv(&mut lines, "layers")?;
    let n_layers: usize = layers_s
        .parse()
        .map_err(|_| lines.err(n, format!("bad layer count {layers_s:?}")))?;
    if n_layers == 0 {
        return Err(lines.err(n, "layer count must be positive"));
    }

    let mut layers = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let (n, header) = lines.next("layer header")?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        let dims: Option<(usize, usize, usize)> = match parts.as_slice() {
            ["layer", a, b, c] => a
                .parse()
                .ok()
                .zip(b.parse().ok())
                .zip(c.parse().ok())
                .map(|((a, b), c)| (a, b, c)),
            _ => None,
        };
        let (idx, din, dout) =
            dims.ok_or_else(|| lines.err(n, format!("bad layer header {header:?}")))?;
        if idx != l {
            return Err(lines.err(n, format!("layer index {idx}, expected {l}")));
        }
        if din == 0 || dout == 0 {
            return Err(lines.err(n, "layer dimensions must be positive"));
        }
        let mut weights = Matrix::zeros(din, dout);
        for i in 0..din {
            let row = parse_hex_row(&mut lines, dout, "weight row")?;
            weights.data_mut()[i * dout..(i + 1) * dout].copy_from_slice(&row);
        }
        let bias = parse_hex_row(&mut lines, dout, "bias row")?;
        layers.push(Layer { weights, bias });
    }

    let (n, terminator) = lines.next("end marker")?;
    if terminator != "end" {
        return Err(lines.err(n, format!("expected end marker, got {terminator:?}")));
    }

    let model = MlpModel::from_parts(layers, activation, dropout_rate, n_classes)
        .map_err(|e| Error::Schema(format!("checkpoint describes an invalid model: {e}")))?;
    Ok((model, CheckpointMeta { seed, config_hash }))
}

pub fn load_checkpoint(path: &Path) -> Result<MlpModel> {
    load_checkpoint_meta(path).map(|(m, _)| m)
}

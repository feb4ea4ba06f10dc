//! Synthetic multi-domain data with controllable invariant and spurious
//! correlations, plus CSV persistence.
//!
//! Each sample is built from a latent cause `z ~ Bernoulli(0.5)`. The label
//! flips `z` with probability `label_noise`; a spurious channel `c` flips the
//! label with the per-domain probability `spur_flip_prob`. Invariant features
//! embed `z`, spurious features embed `c`, both as `(+-mu) + sigma * N(0,1)`
//! per coordinate. Training-domain flip probabilities below 0.5 make the
//! spurious channel the stronger signal; a target domain above 0.5 inverts it.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, rng_from, TAG_DATA};

/// Generation recipe for one domain.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DomainSpec {
    pub domain_id: String,
    pub n_samples: usize,
    /// p_e: probability the spurious channel disagrees with the label.
    pub spur_flip_prob: f64,
    /// eta: probability the label disagrees with the latent cause.
    pub label_noise: f64,
    pub d_inv: usize,
    pub d_spur: usize,
    pub signal_mean: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.spur_flip_prob) {
            return Err(Error::InvalidInput(format!(
                "spur_flip_prob must be in [0,1], got {}",
                self.spur_flip_prob
            )));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(Error::InvalidInput(format!(
                "label_noise must be in [0,1], got {}",
                self.label_noise
            )));
        }
        if self.d_inv == 0 || self.d_spur == 0 {
            return Err(Error::InvalidInput(
                "d_inv and d_spur must be >= 1".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        if !self.signal_mean.is_finite() {
            return Err(Error::InvalidInput("signal_mean must be finite".into()));
        }
        if self.domain_id.is_empty() || self.domain_id.contains([',', '\n', '\r']) {
            return Err(Error::InvalidInput(format!(
                "domain_id {:?} must be nonempty and free of commas/newlines",
                self.domain_id
            )));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.d_inv + self.d_spur
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: usize,
    pub domain_id: String,
}

/// One generated domain: the recipe plus its samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub spec: DomainSpec,
    pub samples: Vec<Sample>,
}

impl DomainDataset {
    /// Features as an `n x (d_inv + d_spur)` matrix.
    pub fn features(&self) -> Matrix {
        let d = self.spec.feature_dim();
        let mut m = Matrix::zeros(self.samples.len(), d);
        for (i, s) in self.samples.iter().enumerate() {
            m.row_mut(i).copy_from_slice(&s.x);
        }
        m
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.y).collect()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Generates one domain. Pure in the spec: the same spec (seed included)
/// always yields the same samples.
///
/// Per-sample draw order is fixed (z, label flip, spur flip, invariant
/// normals, spurious normals) so datasets stay stable across refactors.
pub fn generate_domain(spec: &DomainSpec) -> Result<DomainDataset> {
    spec.validate()?;
    let mut rng = rng_from(spec.seed);
    let mut samples = Vec::with_capacity(spec.n_samples);
    for _ in 0..spec.n_samples {
        let z = rng.random::<f64>() < 0.5;
        let flip_y = rng.random::<f64>() < spec.label_noise;
        let flip_c = rng.random::<f64>() < spec.spur_flip_prob;
        let y = z ^ flip_y;
        let c = y ^ flip_c;
        let mut x = Vec::with_capacity(spec.feature_dim());
        let z_sign = if z { 1.0 } else { -1.0 };
        for _ in 0..spec.d_inv {
            let n: f64 = rng.sample(StandardNormal);
            x.push(z_sign * spec.signal_mean + spec.noise_sigma * n);
        }
        let c_sign = if c { 1.0 } else { -1.0 };
        for _ in 0..spec.d_spur {
            let n: f64 = rng.sample(StandardNormal);
            x.push(c_sign * spec.signal_mean + spec.noise_sigma * n);
        }
        samples.push(Sample {
            x,
            y: y as usize,
            domain_id: spec.domain_id.clone(),
        });
    }
    Ok(DomainDataset {
        spec: spec.clone(),
        samples,
    })
}

/// Knobs for the stock multi-domain benchmark.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkParams {
    /// Spurious flip probability per training domain (one domain each).
    pub train_flip_probs: Vec<f64>,
    pub target_flip_prob: f64,
    pub label_noise: f64,
    pub d_inv: usize,
    pub d_spur: usize,
    pub signal_mean: f64,
    pub noise_sigma: f64,
    pub n_per_domain: usize,
}

impl Default for BenchmarkParams {
    fn default() -> Self {
        BenchmarkParams {
            train_flip_probs: vec![0.1, 0.2],
            target_flip_prob: 0.9,
            label_noise: 0.25,
            d_inv: 5,
            d_spur: 5,
            signal_mean: 1.0,
            noise_sigma: 0.5,
            n_per_domain: 2000,
        }
    }
}

impl BenchmarkParams {
    pub fn validate(&self) -> Result<()> {
        if self.train_flip_probs.is_empty() {
            return Err(Error::InvalidInput(
                "train_flip_probs must name at least one training domain".into(),
            ));
        }
        if self.n_per_domain == 0 {
            return Err(Error::InvalidInput("n_per_domain must be >= 1".into()));
        }
        // Full validation happens per generated domain; probe the shared fields once.
        self.domain_spec("probe", 0, self.target_flip_prob, 0)?.validate()
    }

    fn domain_spec(
        &self,
        domain_id: &str,
        n_samples: usize,
        spur_flip_prob: f64,
        seed: u64,
    ) -> Result<DomainSpec> {
        let spec = DomainSpec {
            domain_id: domain_id.to_string(),
            n_samples,
            spur_flip_prob,
            label_noise: self.label_noise,
            d_inv: self.d_inv,
            d_spur: self.d_spur,
            signal_mean: self.signal_mean,
            noise_sigma: self.noise_sigma,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// The generated benchmark: labeled training domains, the unlabeled-use target
/// split, and a disjoint labeled split reserved for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub train: Vec<DomainDataset>,
    pub target: DomainDataset,
    pub target_eval: DomainDataset,
}

/// Stream indices under the data seed: train domain `i` uses `i + 1`, the
/// target pool uses `0`.
const TARGET_POOL_STREAM: u64 = 0;

/// Builds the benchmark from params. `target` and `target_eval` come from one
/// generated pool of `2 * n_per_domain` samples split in half, so the two are
/// disjoint by construction while sharing the same distribution.
pub fn make_benchmark(params: &BenchmarkParams, master_seed: u64) -> Result<Benchmark> {
    params.validate()?;
    let data_seed = derive_seed(master_seed, TAG_DATA);
    let mut train = Vec::with_capacity(params.train_flip_probs.len());
    for (i, &p) in params.train_flip_probs.iter().enumerate() {
        let spec = params.domain_spec(
            &format!("train_{i}"),
            params.n_per_domain,
            p,
            derive_seed(data_seed, i as u64 + 1),
        )?;
        train.push(generate_domain(&spec)?);
    }

    let n = params.n_per_domain;
    let pool_spec = params.domain_spec(
        "target",
        2 * n,
        params.target_flip_prob,
        derive_seed(data_seed, TARGET_POOL_STREAM),
    )?;
    let pool = generate_domain(&pool_spec)?;

    let mut target_samples = pool.samples;
    let eval_samples: Vec<Sample> = target_samples
        .split_off(n)
        .into_iter()
        .map(|mut s| {
            s.domain_id = "target_eval".to_string();
            s
        })
        .collect();

    let mut target_spec = pool_spec.clone();
    target_spec.n_samples = n;
    let mut eval_spec = pool_spec;
    eval_spec.domain_id = "target_eval".to_string();
    eval_spec.n_samples = n;

    Ok(Benchmark {
        train,
        target: DomainDataset {
            spec: target_spec,
            samples: target_samples,
        },
        target_eval: DomainDataset {
            spec: eval_spec,
            samples: eval_samples,
        },
    })
}

/// [`make_benchmark`] with stock params and a caller-chosen master seed.
pub fn default_benchmark_seeded(master_seed: u64) -> Benchmark {
    make_benchmark(&BenchmarkParams::default(), master_seed)
        .expect("stock params are valid by construction")
}

/// Stock benchmark at a fixed seed: two training domains with spurious flip
/// probabilities 0.1 and 0.2, a target domain at 0.9, label noise 0.25.
pub fn default_benchmark() -> Benchmark {
    default_benchmark_seeded(0)
}

const CSV_MAGIC: &str = "# simprov-dataset v1";

fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes one domain as CSV: a magic line, `# key=value` spec lines, a column
/// header, then one row per sample. Reals carry 17 significant digits so the
/// round trip is lossless; line endings are LF.
pub fn save_csv(ds: &DomainDataset, path: &std::path::Path) -> Result<()> {
    use std::io::Write;
    let d = ds.spec.feature_dim();
    let mut out = String::new();
    out.push_str(CSV_MAGIC);
    out.push('\n');
    out.push_str(&format!("# domain_id={}\n", ds.spec.domain_id));
    out.push_str(&format!("# n_samples={}\n", ds.spec.n_samples));
    out.push_str(&format!(
        "# spur_flip_prob={}\n",
        fmt_real(ds.spec.spur_flip_prob)
    ));
    out.push_str(&format!("# label_noise={}\n", fmt_real(ds.spec.label_noise)));
    out.push_str(&format!("# d_inv={}\n", ds.spec.d_inv));
    out.push_str(&format!("# d_spur={}\n", ds.spec.d_spur));
    out.push_str(&format!("# signal_mean={}\n", fmt_real(ds.spec.signal_mean)));
    out.push_str(&format!("# noise_sigma={}\n", fmt_real(ds.spec.noise_sigma)));
    out.push_str(&format!("# seed={}\n", ds.spec.seed));
    out.push_str("domain_id,y");
    for j in 0..d {
        out.push_str(&format!(",x_{j}"));
    }
    out.push('\n');
    for s in &ds.samples {
        out.push_str(&s.domain_id);
        out.push(',');
        out.push_str(&s.y.to_string());
        for v in &s.x {
            out.push(',');
            out.push_str(&fmt_real(*v));
        }
        out.push('\n');
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

struct HeaderParser<'a> {
    path: &'a std::path::Path,
}

impl<'a> HeaderParser<'a> {
    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.display().to_string(),
            line,
            msg: msg.into(),
        }
    }

    fn field<T: std::str::FromStr>(
        &self,
        fields: &std::collections::HashMap<String, (String, usize)>,
        key: &str,
    ) -> Result<T> {
        let (raw, line) = fields
            .get(key)
            .ok_or_else(|| self.err(1, format!("missing header field {key}")))?;
        raw.parse::<T>()
            .map_err(|_| self.err(*line, format!("bad value {raw:?} for {key}")))
    }
}

/// Reads a dataset written by [`save_csv`]. Malformed content is reported with
/// its 1-based line number.
pub fn load_csv(path: &std::path::Path) -> Result<DomainDataset> {
    let text = std::fs::read_to_string(path)?;
    let p = HeaderParser { path };
    let mut lines = text.lines().enumerate();

    match lines.next() {
        Some((_, l)) if l == CSV_MAGIC => {}
        Some((_, l)) => {
            return Err(p.err(1, format!("expected {CSV_MAGIC:?}, found {l:?}")));
        }
        None => return Err(p.err(1, "empty file")),
    }

    let mut fields: std::collections::HashMap<String, (String, usize)> =
        std::collections::HashMap::new();
    let mut header: Option<(usize, String)> = None;
    for (idx, line) in lines.by_ref() {
        let line_no = idx + 1;
        if let Some(rest) = line.strip_prefix("# ") {
            let (key, value) = rest
                .split_once('=')
                .ok_or_else(|| p.err(line_no, "metadata line without key=value"))?;
            if fields
                .insert(key.to_string(), (value.to_string(), line_no))
                .is_some()
            {
                return Err(p.err(line_no, format!("duplicate metadata key {key}")));
            }
        } else {
            header = Some((line_no, line.to_string()));
            break;
        }
    }
    let (header_line, header_text) =
        header.ok_or_else(|| p.err(text.lines().count().max(1), "missing column header"))?;

    let spec = DomainSpec {
        domain_id: p.field::<String>(&fields, "domain_id")?,
        n_samples: p.field(&fields, "n_samples")?,
        spur_flip_prob: p.field(&fields, "spur_flip_prob")?,
        label_noise: p.field(&fields, "label_noise")?,
        d_inv: p.field(&fields, "d_inv")?,
        d_spur: p.field(&fields, "d_spur")?,
        signal_mean: p.field(&fields, "signal_mean")?,
        noise_sigma: p.field(&fields, "noise_sigma")?,
        seed: p.field(&fields, "seed")?,
    };
    spec.validate()
        .map_err(|e| p.err(header_line - 1, format!("invalid spec in header: {e}")))?;

    let d = spec.feature_dim();
    let mut expect = String::from("domain_id,y");
    for j in 0..d {
        expect.push_str(&format!(",x_{j}"));
    }
    if header_text != expect {
        return Err(p.err(
            header_line,
            format!("bad column header: expected {expect:?}, found {header_text:?}"),
        ));
    }

    let mut samples = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let domain_id = parts.next().unwrap().to_string();
        let y_raw = parts
            .next()
            .ok_or_else(|| p.err(line_no, "row has no label column"))?;
        let y: usize = y_raw
            .parse()
            .map_err(|_| p.err(line_no, format!("bad label {y_raw:?}")))?;
        if y > 1 {
            return Err(p.err(line_no, format!("label {y} out of range {{0,1}}")));
        }
        let mut x = Vec::with_capacity(d);
        for part in parts {
            let v: f64 = part
                .parse()
                .map_err(|_| p.err(line_no, format!("bad real {part:?}")))?;
            if !v.is_finite() {
                return Err(p.err(line_no, format!("non-finite feature {part:?}")));
            }
            x.push(v);
        }
        if x.len() != d {
            return Err(p.err(
                line_no,
                format!("expected {} feature columns, found {}", d, x.len()),
            ));
        }
        samples.push(Sample { x, y, domain_id });
    }
    if samples.len() != spec.n_samples {
        return Err(Error::Schema(format!(
            "{}: header says n_samples={}, file has {} rows",
            path.display(),
            spec.n_samples,
            samples.len()
        )));
    }
    Ok(DomainDataset { spec, samples })
}

//! Synthetic heterogeneous client populations.
//!
//! Every client shares the same class-conditional Gaussian means, but draws
//! its class prior from `Dirichlet(label_skew_alpha)` and sees its inputs
//! through a client-specific rotation. Train, dev and test splits are drawn
//! independently from that client distribution.
//!
//! Splits can be written to and read back from a plain text format:
//!
//! ```text
//! fedlorar-dataset v1 client_id=3 split=train input_dim=2 num_classes=4 rows=2
//! 0.25,-1.5\t2
//! 1,0.125\t0
//! ```
//!
//! Features use Rust's shortest round-trip float formatting, so a file read
//! back and written again is byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Batch, Targets};
use crate::seeds;

/// Default train sizes: two large, three medium and three small clients.
pub const DEFAULT_TRAIN_SIZES: [usize; 8] = [2629, 4347, 549, 228, 499, 120, 78, 78];

/// Per-client data labelled with integer classes, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    input_dim: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl Split {
    pub fn new(input_dim: usize, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if input_dim == 0 || features.len() != input_dim * labels.len() {
            return Err(Error::DimensionMismatch {
                expected: input_dim * labels.len(),
                actual: features.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteResult("Split::new"));
        }
        Ok(Self {
            input_dim,
            features,
            labels,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    /// Count of examples per class.
    pub fn class_histogram(&self, num_classes: usize) -> Vec<usize> {
        let mut h = vec![0; num_classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// The whole split as one batch; labels become real targets for
    /// regression models.
    pub fn to_batch(&self, regression: bool) -> Result<Batch> {
        let targets = if regression {
            Targets::Values(self.labels.iter().map(|&l| l as f64).collect())
        } else {
            Targets::Classes(self.labels.clone())
        };
        Batch::new(self.features.clone(), self.input_dim, targets)
    }

    fn extend(&mut self, other: &Split) {
        self.features.extend_from_slice(&other.features);
        self.labels.extend_from_slice(&other.labels);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub client_id: usize,
    pub num_classes: usize,
    pub train: Split,
    pub dev: Split,
    pub test: Split,
}

impl ClientDataset {
    /// `|D_i|`, the number of training examples.
    pub fn size(&self) -> usize {
        self.train.len()
    }

    pub fn input_dim(&self) -> usize {
        self.train.input_dim()
    }

    /// Write `client_<id>_{train,dev,test}.txt` into `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (name, split) in [
            ("train", &self.train),
            ("dev", &self.dev),
            ("test", &self.test),
        ] {
            let mut f =
                fs::File::create(dir.join(format!("client_{}_{name}.txt", self.client_id)))?;
            write_split(&mut f, self.client_id, name, self.num_classes, split)?;
        }
        Ok(())
    }

    /// Inverse of [`ClientDataset::export`].
    pub fn import(dir: &Path, client_id: usize) -> Result<Self> {
        let mut parts = Vec::with_capacity(3);
        for name in ["train", "dev", "test"] {
            let f = fs::File::open(dir.join(format!("client_{client_id}_{name}.txt")))?;
            let (header, split) = read_split(f)?;
            if header.client_id != client_id || header.split != name {
                return Err(Error::DataFormat {
                    line: 1,
                    message: format!(
                        "expected client {client_id} {name}, found client {} {}",
                        header.client_id, header.split
                    ),
                });
            }
            parts.push((header.num_classes, split));
        }
        let num_classes = parts[0].0;
        if parts
            .iter()
            .any(|(k, s)| *k != num_classes || s.input_dim() != parts[0].1.input_dim())
        {
            return Err(Error::IncompatibleSchemas(format!(
                "client {client_id} splits disagree"
            )));
        }
        let mut it = parts.into_iter().map(|(_, s)| s);
        let (train, dev, test) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
        if train.is_empty() {
            return Err(Error::EmptyDataset(client_id));
        }
        Ok(Self {
            client_id,
            num_classes,
            train,
            dev,
            test,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub num_clients: usize,
    /// Train size per client.
    pub sizes: Vec<usize>,
    /// Dirichlet concentration of the per-client class priors.
    pub label_skew_alpha: f64,
    /// Rotation angle (radians) applied to each client's inputs.
    pub feature_rotation: Vec<f64>,
    pub num_classes: usize,
    pub input_dim: usize,
    /// Standard deviation of the shared class means.
    pub class_separation: f64,
    /// Standard deviation of an offset added to every class mean. Because
    /// inputs are rotated per client, a nonzero offset gives each client a
    /// recognisable input region.
    pub mean_offset: f64,
    /// Within-class noise standard deviation.
    pub noise_std: f64,
    /// Dev and test sizes as fractions of the full client pool (train gets
    /// the rest).
    pub dev_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl PopulationSpec {
    /// Eight clients with heavily skewed train sizes and rotations spread
    /// evenly over `[0, π/2]`.
    pub fn standard(label_skew_alpha: f64, seed: u64) -> Self {
        let n = DEFAULT_TRAIN_SIZES.len();
        let max_rotation = std::f64::consts::FRAC_PI_2;
        Self {
            num_clients: n,
            sizes: DEFAULT_TRAIN_SIZES.to_vec(),
            label_skew_alpha,
            feature_rotation: (0..n)
                .map(|i| max_rotation * i as f64 / (n - 1) as f64)
                .collect(),
            num_classes: 5,
            input_dim: 32,
            class_separation: 0.8,
            mean_offset: 1.0,
            noise_std: 1.0,
            dev_fraction: 0.1,
            test_fraction: 0.2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.num_clients == 0 {
            return bad("population needs at least one client");
        }
        if self.sizes.len() != self.num_clients || self.feature_rotation.len() != self.num_clients {
            return bad("sizes and feature_rotation must have one entry per client");
        }
        if self.sizes.contains(&0) {
            return bad("client sizes must be positive");
        }
        if !(self.label_skew_alpha > 0.0 && self.label_skew_alpha.is_finite()) {
            return bad("label_skew_alpha must be positive");
        }
        if self.num_classes < 2 || self.input_dim == 0 {
            return bad("need at least two classes and a positive input_dim");
        }
        if !(self.noise_std >= 0.0 && self.class_separation >= 0.0 && self.mean_offset >= 0.0) {
            return bad("noise_std, class_separation and mean_offset must be nonnegative");
        }
        let (d, t) = (self.dev_fraction, self.test_fraction);
        if !(d > 0.0 && t > 0.0 && d + t < 1.0) {
            return bad("dev/test fractions must be positive and leave room for train");
        }
        if self.feature_rotation.iter().any(|a| !a.is_finite()) {
            return bad("rotation angles must be finite");
        }
        Ok(())
    }

    /// Dev and test sizes for a client with `train` training examples.
    pub fn held_out_sizes(&self, train: usize) -> (usize, usize) {
        let train_fraction = 1.0 - self.dev_fraction - self.test_fraction;
        let scale = train as f64 / train_fraction;
        let dev = ((scale * self.dev_fraction).round() as usize).max(1);
        let test = ((scale * self.test_fraction).round() as usize).max(1);
        (dev, test)
    }
}

/// Draw one probability vector from a symmetric Dirichlet.
pub fn dirichlet<R: Rng + ?Sized>(alpha: f64, k: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha > 0");
    let mut draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.iter_mut().for_each(|v| *v /= total);
    } else {
        // every gamma draw underflowed: all mass on one class
        let hot = rng.random_range(0..k);
        draws
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = f64::from(u8::from(i == hot)));
    }
    draws
}

fn sample_class<R: Rng + ?Sized>(prior: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (c, p) in prior.iter().enumerate() {
        acc += p;
        if u < acc {
            return c;
        }
    }
    prior.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Givens rotation by `angle` on coordinate pairs (0,1), (2,3), ...
fn rotate(x: &mut [f64], angle: f64) {
    let (s, c) = angle.sin_cos();
    for pair in x.chunks_exact_mut(2) {
        let (a, b) = (pair[0], pair[1]);
        pair[0] = c * a - s * b;
        pair[1] = s * a + c * b;
    }
}

struct ClientSampler<'a> {
    spec: &'a PopulationSpec,
    means: &'a [Vec<f64>],
    prior: Vec<f64>,
    angle: f64,
    rng: ChaCha8Rng,
}

impl ClientSampler<'_> {
    fn draw(&mut self, n: usize) -> Split {
        let d = self.spec.input_dim;
        let mut features = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        let mut x = vec![0.0; d];
        for _ in 0..n {
            let y = sample_class(&self.prior, &mut self.rng);
            for (xj, mj) in x.iter_mut().zip(&self.means[y]) {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                *xj = mj + self.spec.noise_std * z;
            }
            rotate(&mut x, self.angle);
            features.extend_from_slice(&x);
            labels.push(y);
        }
        Split::new(d, features, labels).expect("generated split is well-formed")
    }
}

/// The class prior drawn for each client of `spec`, in client order.
pub fn class_priors(spec: &PopulationSpec) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    Ok((0..spec.num_clients)
        .map(|i| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seeds::derive(spec.seed, seeds::DATA_CLIENT, i as u64));
            dirichlet(spec.label_skew_alpha, spec.num_classes, &mut rng)
        })
        .collect())
}

pub fn generate_population(spec: &PopulationSpec) -> Result<Vec<ClientDataset>> {
    spec.validate()?;
    let mut mean_rng = ChaCha8Rng::seed_from_u64(seeds::derive(spec.seed, seeds::DATA_MEANS, 0));
    let mut normal =
        |scale: f64| scale * Distribution::<f64>::sample(&StandardNormal, &mut mean_rng);
    let mut means: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| {
            (0..spec.input_dim)
                .map(|_| normal(spec.class_separation))
                .collect()
        })
        .collect();
    let offset: Vec<f64> = (0..spec.input_dim)
        .map(|_| normal(spec.mean_offset))
        .collect();
    for m in &mut means {
        for (mj, oj) in m.iter_mut().zip(&offset) {
            *mj += oj;
        }
    }

    let mut clients = Vec::with_capacity(spec.num_clients);
    for (i, &size) in spec.sizes.iter().enumerate() {
        // The prior is the first draw of the client's stream; class_priors
        // relies on that.
        let mut rng =
            ChaCha8Rng::seed_from_u64(seeds::derive(spec.seed, seeds::DATA_CLIENT, i as u64));
        let prior = dirichlet(spec.label_skew_alpha, spec.num_classes, &mut rng);
        let mut sampler = ClientSampler {
            spec,
            means: &means,
            prior,
            angle: spec.feature_rotation[i],
            rng,
        };
        let (dev_n, test_n) = spec.held_out_sizes(size);
        let train = sampler.draw(size);
        let dev = sampler.draw(dev_n);
        let test = sampler.draw(test_n);
        clients.push(ClientDataset {
            client_id: i,
            num_classes: spec.num_classes,
            train,
            dev,
            test,
        });
    }
    Ok(clients)
}

/// Concatenate clients in ascending `client_id` order. The result carries
/// the smallest client id.
pub fn merge(datasets: &[ClientDataset]) -> Result<ClientDataset> {
    let mut sorted: Vec<&ClientDataset> = datasets.iter().collect();
    sorted.sort_by_key(|d| d.client_id);
    let first = *sorted.first().ok_or(Error::EmptyInput("merge"))?;
    let mut out = first.clone();
    for d in &sorted[1..] {
        if d.num_classes != first.num_classes || d.input_dim() != first.input_dim() {
            return Err(Error::IncompatibleSchemas(format!(
                "client {} has {} classes / dim {}, client {} has {} / {}",
                first.client_id,
                first.num_classes,
                first.input_dim(),
                d.client_id,
                d.num_classes,
                d.input_dim()
            )));
        }
        out.train.extend(&d.train);
        out.dev.extend(&d.dev);
        out.test.extend(&d.test);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitHeader {
    pub client_id: usize,
    pub split: String,
    pub input_dim: usize,
    pub num_classes: usize,
    pub rows: usize,
}

const MAGIC: &str = "fedlorar-dataset v1";

pub fn write_split<W: Write>(
    out: &mut W,
    client_id: usize,
    split_name: &str,
    num_classes: usize,
    split: &Split,
) -> Result<()> {
    let mut buf = String::new();
    writeln!(
        buf,
        "{MAGIC} client_id={client_id} split={split_name} input_dim={} num_classes={num_classes} rows={}",
        split.input_dim(),
        split.len()
    )
    .unwrap();
    for i in 0..split.len() {
        for (j, v) in split.row(i).iter().enumerate() {
            if j > 0 {
                buf.push(',');
            }
            write!(buf, "{v}").unwrap();
        }
        writeln!(buf, "\t{}", split.labels()[i]).unwrap();
    }
    out.write_all(buf.as_bytes())?;
    Ok(())
}

pub fn read_split<R: Read>(input: R) -> Result<(SplitHeader, Split)> {
    let fmt_err = |line: usize, message: String| Error::DataFormat { line, message };
    let mut lines = BufReader::new(input).lines();
    let head = lines
        .next()
        .ok_or_else(|| fmt_err(1, "missing header".into()))??;
    let rest = head
        .strip_prefix(MAGIC)
        .ok_or_else(|| fmt_err(1, format!("expected `{MAGIC}` header")))?;
    let mut header = SplitHeader {
        client_id: 0,
        split: String::new(),
        input_dim: 0,
        num_classes: 0,
        rows: 0,
    };
    let mut seen = 0;
    for field in rest.split_whitespace() {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| fmt_err(1, format!("bad header field `{field}`")))?;
        let num = || {
            v.parse::<usize>()
                .map_err(|e| fmt_err(1, format!("{k}: {e}")))
        };
        match k {
            "client_id" => header.client_id = num()?,
            "split" => header.split = v.to_string(),
            "input_dim" => header.input_dim = num()?,
            "num_classes" => header.num_classes = num()?,
            "rows" => header.rows = num()?,
            _ => return Err(fmt_err(1, format!("unknown header field `{k}`"))),
        }
        seen += 1;
    }
    if seen != 5 || header.input_dim == 0 {
        return Err(fmt_err(1, "incomplete header".into()));
    }

    let mut features = Vec::with_capacity(header.rows * header.input_dim);
    let mut labels = Vec::with_capacity(header.rows);
    for (n, line) in lines.enumerate() {
        let lineno = n + 2;
        let line = line?;
        let (xs, y) = line
            .split_once('\t')
            .ok_or_else(|| fmt_err(lineno, "missing tab before label".into()))?;
        let before = features.len();
        for tok in xs.split(',') {
            let v: f64 = tok
                .parse()
                .map_err(|e| fmt_err(lineno, format!("feature `{tok}`: {e}")))?;
            features.push(v);
        }
        if features.len() - before != header.input_dim {
            return Err(fmt_err(
                lineno,
                format!("expected {} features", header.input_dim),
            ));
        }
        let label: usize = y
            .parse()
            .map_err(|e| fmt_err(lineno, format!("label `{y}`: {e}")))?;
        if label >= header.num_classes {
            return Err(fmt_err(lineno, format!("label {label} out of range")));
        }
        labels.push(label);
    }
    if labels.len() != header.rows {
        return Err(fmt_err(
            1,
            format!("header says {} rows, found {}", header.rows, labels.len()),
        ));
    }
    let split = Split::new(header.input_dim, features, labels)?;
    Ok((header, split))
}

//! Synthetic supervised datasets, their five-way splits and the on-disk
//! dataset format.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::numkit::{Mat, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Regression,
    Classification,
}

impl DatasetKind {
    pub fn tag(&self) -> &'static str {
        match self {
            DatasetKind::Regression => "regression",
            DatasetKind::Classification => "classification",
        }
    }
}

/// Generating parameters that are known after synthesis, kept for oracle
/// checks and noise-floor reporting.
#[derive(Debug, Clone, PartialEq)]
pub enum GroundTruth {
    Linear {
        w: Vec<f64>,
        noise_std: f64,
    },
    Clusters {
        /// Four centers in the informative block; the first two are positive.
        centers: Vec<Vec<f64>>,
        /// `n_informative × n_redundant` mixing matrix of the redundant block.
        mixing: Mat,
        n_informative: usize,
        n_redundant: usize,
    },
}

#[derive(Debug, Clone)]
pub struct SupervisedDataset {
    pub kind: DatasetKind,
    pub seed: u64,
    /// Free-form generation spec, echoed into the file header.
    pub spec: String,
    pub inputs: Mat,
    pub targets: Vec<f64>,
    pub truth: GroundTruth,
}

impl SupervisedDataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    /// MSE of the generating linear model on `idx`: the irreducible error.
    pub fn noise_floor(&self, idx: &[usize]) -> Option<f64> {
        match &self.truth {
            GroundTruth::Linear { w, .. } => {
                let sse: f64 = idx
                    .iter()
                    .map(|&i| {
                        let e = crate::numkit::dot(w, self.input(i)) - self.targets[i];
                        e * e
                    })
                    .sum();
                Some(sse / idx.len() as f64)
            }
            GroundTruth::Clusters { .. } => None,
        }
    }
}

/// `v = wᵀu + ξ` with `w ~ U[-0.5, 0.5]^d`, `u ~ U[-5, 5]^d`, `ξ ~ N(0, noise_std²)`.
pub fn synth_regression_data(d: usize, p: usize, noise_std: f64, rng: &mut Rng) -> Result<SupervisedDataset> {
    if d == 0 || p == 0 {
        return Err(Error::InvalidArgument("regression data needs d >= 1 and P >= 1".into()));
    }
    let seed = rng.seed();
    let w = rng.uniform_vec(d, -0.5, 0.5);
    let mut inputs = Mat::zeros(p, d);
    let mut targets = Vec::with_capacity(p);
    for i in 0..p {
        let row = inputs.row_mut(i);
        for v in row.iter_mut() {
            *v = rng.uniform(-5.0, 5.0);
        }
        let xi = rng.gauss(0.0, noise_std);
        targets.push(crate::numkit::dot(&w, inputs.row(i)) + xi);
    }
    Ok(SupervisedDataset {
        kind: DatasetKind::Regression,
        seed,
        spec: format!("noise_std={noise_std}"),
        inputs,
        targets,
        truth: GroundTruth::Linear { w, noise_std },
    })
}

/// Parameters of the four-cluster classification generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationSpec {
    pub d: usize,
    pub p: usize,
    /// Half side length of the hypercube whose vertices are the centers.
    pub class_sep: f64,
    pub informative_frac: f64,
    pub redundant_frac: f64,
}

impl Default for ClassificationSpec {
    fn default() -> Self {
        ClassificationSpec {
            d: 100,
            p: 10_000,
            class_sep: 1.0,
            informative_frac: 0.05,
            redundant_frac: 0.05,
        }
    }
}

impl ClassificationSpec {
    pub fn n_informative(&self) -> usize {
        ((self.d as f64 * self.informative_frac).round() as usize).max(1)
    }

    pub fn n_redundant(&self) -> usize {
        (self.d as f64 * self.redundant_frac).round() as usize
    }
}

/// Four hypercube-vertex centers (two per class) in an informative block,
/// a block of fixed random linear combinations of it, and pure noise.
///
/// Centers are distinct vertices of `{-s, s}^k`. One coordinate is reserved
/// to carry the class sign so the two classes are separable along it.
pub fn synth_classification_data(spec: ClassificationSpec, rng: &mut Rng) -> Result<SupervisedDataset> {
    let n_inf = spec.n_informative();
    let n_red = spec.n_redundant();
    if spec.d < 40 || n_inf < 2 {
        return Err(Error::InvalidArgument(format!(
            "classification needs d >= 40 so the informative block has at least 2 dims (d = {})",
            spec.d
        )));
    }
    if n_inf + n_red > spec.d || spec.p == 0 {
        return Err(Error::InvalidArgument("informative + redundant dims exceed d".into()));
    }
    let seed = rng.seed();
    let s = spec.class_sep;
    let label_coord = rng.below(n_inf);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(4);
    while centers.len() < 4 {
        let positive = centers.len() < 2;
        let c: Vec<f64> = (0..n_inf)
            .map(|j| {
                if j == label_coord {
                    if positive {
                        s
                    } else {
                        -s
                    }
                } else if rng.bernoulli(0.5) {
                    s
                } else {
                    -s
                }
            })
            .collect();
        if !centers.contains(&c) {
            centers.push(c);
        }
    }
    let mixing = Mat::from_fn(n_inf, n_red, |_, _| rng.uniform(-1.0, 1.0));
    let mut inputs = Mat::zeros(spec.p, spec.d);
    let mut targets = Vec::with_capacity(spec.p);
    for i in 0..spec.p {
        let label = rng.bernoulli(0.5);
        let which = rng.below(2) + if label { 0 } else { 2 };
        let row = inputs.row_mut(i);
        for j in 0..n_inf {
            row[j] = centers[which][j] + rng.gauss(0.0, 1.0);
        }
        for r in 0..n_red {
            let mut acc = 0.0;
            for j in 0..n_inf {
                acc += row[j] * mixing.get(j, r);
            }
            row[n_inf + r] = acc;
        }
        for v in row[n_inf + n_red..].iter_mut() {
            *v = rng.gauss(0.0, 1.0);
        }
        targets.push(if label { 1.0 } else { 0.0 });
    }
    Ok(SupervisedDataset {
        kind: DatasetKind::Classification,
        seed,
        spec: format!(
            "class_sep={} informative_frac={} redundant_frac={}",
            spec.class_sep, spec.informative_frac, spec.redundant_frac
        ),
        inputs,
        targets,
        truth: GroundTruth::Clusters {
            centers,
            mixing,
            n_informative: n_inf,
            n_redundant: n_red,
        },
    })
}

/// The five disjoint partitions: controller train/val, task train/val, test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSet {
    pub train_c: Vec<usize>,
    pub val_c: Vec<usize>,
    pub train_t: Vec<usize>,
    pub val_t: Vec<usize>,
    pub test: Vec<usize>,
}

pub const DEFAULT_SPLIT_FRACTIONS: [f64; 5] = [0.35, 0.15, 0.25, 0.1, 0.15];

impl SplitSet {
    pub fn new(n: usize, fractions: [f64; 5], rng: &mut Rng) -> Result<Self> {
        let total: f64 = fractions.iter().sum();
        if (total - 1.0).abs() > 1e-9 || fractions.iter().any(|f| *f <= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "split fractions must be positive and sum to 1, got {fractions:?}"
            )));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut idx);
        let mut parts: Vec<Vec<usize>> = Vec::with_capacity(5);
        let mut start = 0;
        let mut acc = 0.0;
        for (i, f) in fractions.iter().enumerate() {
            acc += f;
            let end = if i == 4 { n } else { (acc * n as f64).round() as usize };
            parts.push(idx[start..end].to_vec());
            start = end;
        }
        if parts.iter().any(|p| p.is_empty()) {
            return Err(Error::InvalidArgument(format!("dataset of size {n} too small for five splits")));
        }
        let mut it = parts.into_iter();
        Ok(SplitSet {
            train_c: it.next().unwrap(),
            val_c: it.next().unwrap(),
            train_t: it.next().unwrap(),
            val_t: it.next().unwrap(),
            test: it.next().unwrap(),
        })
    }

    pub fn parts(&self) -> [(&'static str, &Vec<usize>); 5] {
        [
            ("train_c", &self.train_c),
            ("val_c", &self.val_c),
            ("train_t", &self.train_t),
            ("val_t", &self.val_t),
            ("test", &self.test),
        ]
    }

    pub fn encode(&self) -> String {
        let mut out = String::from("# autoloss-splits v1\n");
        for (name, idx) in self.parts() {
            out.push_str(name);
            for i in idx {
                let _ = write!(out, " {i}");
            }
            out.push('\n');
        }
        out
    }

    pub fn decode(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("# autoloss-splits v1") {
            return Err(Error::InvalidArgument("not an autoloss split file".into()));
        }
        let mut parts: Vec<Vec<usize>> = Vec::new();
        for (expected, line) in ["train_c", "val_c", "train_t", "val_t", "test"].iter().zip(lines) {
            let mut it = line.split_whitespace();
            if it.next() != Some(*expected) {
                return Err(Error::InvalidArgument(format!("split file: expected {expected}")));
            }
            parts.push(
                it.map(|s| s.parse().map_err(|_| Error::InvalidArgument(format!("bad index {s:?}"))))
                    .collect::<Result<_>>()?,
            );
        }
        if parts.len() != 5 {
            return Err(Error::InvalidArgument("split file is truncated".into()));
        }
        let mut it = parts.into_iter();
        Ok(SplitSet {
            train_c: it.next().unwrap(),
            val_c: it.next().unwrap(),
            train_t: it.next().unwrap(),
            val_t: it.next().unwrap(),
            test: it.next().unwrap(),
        })
    }
}

fn fmt_floats(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v:.16e}");
    }
}

fn parse_floats(line: &str) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|s| s.parse::<f64>().map_err(|_| Error::InvalidArgument(format!("bad float {s:?}"))))
        .collect()
}

/// Dataset text format: a header line, ground-truth lines prefixed with
/// `#`, then one row per sample (`u_1 .. u_d v`).
pub fn encode_dataset(ds: &SupervisedDataset) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# autoloss-dataset v1 kind={} d={} p={} seed={} spec={}",
        ds.kind.tag(),
        ds.dim(),
        ds.len(),
        ds.seed,
        ds.spec.replace(' ', ",")
    );
    match &ds.truth {
        GroundTruth::Linear { w, noise_std } => {
            let _ = write!(out, "#truth linear {noise_std:.16e} ");
            fmt_floats(&mut out, w);
            out.push('\n');
        }
        GroundTruth::Clusters {
            centers,
            mixing,
            n_informative,
            n_redundant,
        } => {
            let _ = writeln!(out, "#truth clusters {n_informative} {n_redundant}");
            for c in centers {
                out.push_str("#center ");
                fmt_floats(&mut out, c);
                out.push('\n');
            }
            out.push_str("#mixing ");
            fmt_floats(&mut out, mixing.as_slice());
            out.push('\n');
        }
    }
    for i in 0..ds.len() {
        fmt_floats(&mut out, ds.input(i));
        let _ = writeln!(out, " {:.16e}", ds.targets[i]);
    }
    out
}

pub fn decode_dataset(text: &str) -> Result<SupervisedDataset> {
    let bad = |m: &str| Error::InvalidArgument(format!("dataset file: {m}"));
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() < 3 || fields[1] != "autoloss-dataset" || fields[2] != "v1" {
        return Err(bad("missing header"));
    }
    let get = |key: &str| {
        fields
            .iter()
            .find_map(|f| f.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
            .ok_or_else(|| bad(&format!("header lacks {key}")))
    };
    let kind = match get("kind")? {
        "regression" => DatasetKind::Regression,
        "classification" => DatasetKind::Classification,
        other => return Err(bad(&format!("unknown kind {other}"))),
    };
    let d: usize = get("d")?.parse().map_err(|_| bad("d"))?;
    let p: usize = get("p")?.parse().map_err(|_| bad("p"))?;
    let seed: u64 = get("seed")?.parse().map_err(|_| bad("seed"))?;
    let spec = get("spec")?.replace(',', " ");

    let truth_line = lines.next().ok_or_else(|| bad("missing truth"))?;
    let truth = if let Some(rest) = truth_line.strip_prefix("#truth linear ") {
        let vals = parse_floats(rest)?;
        if vals.len() != d + 1 {
            return Err(bad("truth vector length"));
        }
        GroundTruth::Linear {
            noise_std: vals[0],
            w: vals[1..].to_vec(),
        }
    } else if let Some(rest) = truth_line.strip_prefix("#truth clusters ") {
        let dims: Vec<usize> = rest
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| bad("cluster dims")))
            .collect::<Result<_>>()?;
        if dims.len() != 2 {
            return Err(bad("cluster dims"));
        }
        let mut centers = Vec::new();
        for _ in 0..4 {
            let l = lines.next().ok_or_else(|| bad("missing center"))?;
            centers.push(parse_floats(l.strip_prefix("#center ").ok_or_else(|| bad("center"))?)?);
        }
        let l = lines.next().ok_or_else(|| bad("missing mixing"))?;
        let mix = parse_floats(l.strip_prefix("#mixing").ok_or_else(|| bad("mixing"))?)?;
        GroundTruth::Clusters {
            centers,
            mixing: Mat::from_vec(dims[0], dims[1], mix)?,
            n_informative: dims[0],
            n_redundant: dims[1],
        }
    } else {
        return Err(bad("missing truth line"));
    };

    let mut inputs = Mat::zeros(p, d);
    let mut targets = Vec::with_capacity(p);
    for i in 0..p {
        let vals = parse_floats(lines.next().ok_or_else(|| bad("truncated rows"))?)?;
        if vals.len() != d + 1 {
            return Err(bad(&format!("row {i} has {} values", vals.len())));
        }
        inputs.row_mut(i).copy_from_slice(&vals[..d]);
        targets.push(vals[d]);
    }
    Ok(SupervisedDataset {
        kind,
        seed,
        spec,
        inputs,
        targets,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_regression_fits_exactly() {
        let ds = synth_regression_data(8, 500, 0.0, &mut Rng::new(1)).unwrap();
        let all: Vec<usize> = (0..ds.len()).collect();
        assert!(ds.noise_floor(&all).unwrap() < 1e-24);
    }

    #[test]
    fn regression_noise_floor_near_four() {
        let ds = synth_regression_data(32, 10_000, 2.0, &mut Rng::new(2)).unwrap();
        let all: Vec<usize> = (0..ds.len()).collect();
        let floor = ds.noise_floor(&all).unwrap();
        // var of the sample variance of N(0,4) over 1e4 draws: sd = 4*sqrt(2/1e4) ≈ 0.057
        assert!((3.8..4.2).contains(&floor), "{floor}");
    }

    #[test]
    fn synthesis_is_a_pure_function_of_seed() {
        let a = synth_regression_data(4, 50, 2.0, &mut Rng::new(9)).unwrap();
        let b = synth_regression_data(4, 50, 2.0, &mut Rng::new(9)).unwrap();
        assert_eq!(a.inputs, b.inputs);
        assert_eq!(a.targets, b.targets);
        let spec = ClassificationSpec {
            p: 200,
            ..Default::default()
        };
        let a = synth_classification_data(spec, &mut Rng::new(4)).unwrap();
        let b = synth_classification_data(spec, &mut Rng::new(4)).unwrap();
        assert_eq!(a.inputs, b.inputs);
    }

    #[test]
    fn classification_precondition_and_balance() {
        let small = ClassificationSpec {
            d: 39,
            ..Default::default()
        };
        assert!(synth_classification_data(small, &mut Rng::new(0)).is_err());
        let ds = synth_classification_data(ClassificationSpec::default(), &mut Rng::new(3)).unwrap();
        let pos: f64 = ds.targets.iter().sum();
        // binomial(1e4, 0.5): 4 sd = 200
        assert!((pos - 5000.0).abs() < 200.0);
    }

    #[test]
    fn redundant_block_is_reproducible_from_informative_block() {
        let ds = synth_classification_data(
            ClassificationSpec {
                p: 300,
                ..Default::default()
            },
            &mut Rng::new(5),
        )
        .unwrap();
        let GroundTruth::Clusters {
            mixing,
            n_informative,
            n_redundant,
            ..
        } = &ds.truth
        else {
            panic!()
        };
        for i in 0..ds.len() {
            let row = ds.input(i);
            let rebuilt = mixing.matvec_t(&row[..*n_informative]);
            for r in 0..*n_redundant {
                assert!((rebuilt[r] - row[n_informative + r]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn split_partitions_exactly() {
        let s = SplitSet::new(1000, DEFAULT_SPLIT_FRACTIONS, &mut Rng::new(1)).unwrap();
        let mut all: Vec<usize> = s.parts().iter().flat_map(|(_, p)| p.iter().copied()).collect();
        assert_eq!(s.train_c.len(), 350);
        assert_eq!(s.test.len(), 150);
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        assert!(SplitSet::new(1000, [0.3, 0.3, 0.3, 0.3, 0.3], &mut Rng::new(1)).is_err());
        assert_eq!(SplitSet::decode(&s.encode()).unwrap(), s);
    }

    #[test]
    fn dataset_file_round_trip() {
        let ds = synth_regression_data(3, 20, 2.0, &mut Rng::new(8)).unwrap();
        let back = decode_dataset(&encode_dataset(&ds)).unwrap();
        assert_eq!(back.inputs, ds.inputs);
        assert_eq!(back.targets, ds.targets);
        assert_eq!(back.truth, ds.truth);
        let cs = synth_classification_data(
            ClassificationSpec {
                p: 30,
                ..Default::default()
            },
            &mut Rng::new(8),
        )
        .unwrap();
        let text = encode_dataset(&cs);
        let back = decode_dataset(&text).unwrap();
        assert_eq!(back.truth, cs.truth);
        assert_eq!(back.spec, cs.spec);
        assert!(decode_dataset(&text[..text.len() / 2]).is_err());
    }
}

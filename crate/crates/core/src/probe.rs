//! Per-layer linear probes on externally supplied feature vectors.
//!
//! Feature files, one per layer, little-endian:
//!
//! ```text
//! "SEMPROBE" | u32 layer | u64 n | u64 d
//! n x ( u32 len, problem id | u32 len, variable name | f64 target | d x f64 )
//! ```
//!
//! Every layer file must list the same samples in the same order.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::digest::stream_rng;
use crate::persist::{put_string, write_atomic, Reader};
use crate::value::Value;

const MAGIC: &[u8; 8] = b"SEMPROBE";

#[derive(Debug, Clone, PartialEq)]
pub struct SampleMeta {
    pub problem: String,
    pub variable: String,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProbeDataset {
    pub samples: Vec<SampleMeta>,
    /// Layer → one feature vector per sample.
    pub layers: BTreeMap<u32, Vec<Vec<f64>>>,
}

#[derive(Debug, thiserror::Error)]
pub enum ProbeError {
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error("{0}: no feature files found")]
    EmptyDir(String),
    #[error("empty dataset")]
    Empty,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dim { expected: usize, got: usize },
    #[error("split ratio must lie in (0, 1)")]
    Ratio,
    #[error("layer {0} missing")]
    MissingLayer(u32),
}

/// Numeric final values usable as probe targets; booleans are excluded.
pub fn numeric_targets(vars: &BTreeMap<String, Value>) -> Vec<(String, f64)> {
    vars.iter()
        .filter_map(|(k, v)| v.as_f64().filter(|f| f.is_finite()).map(|f| (k.clone(), f)))
        .collect()
}

pub fn encode_layer(layer: u32, samples: &[SampleMeta], features: &[Vec<f64>]) -> Vec<u8> {
    let d = features.first().map_or(0, Vec::len);
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&layer.to_le_bytes());
    out.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    out.extend_from_slice(&(d as u64).to_le_bytes());
    for (s, f) in samples.iter().zip(features) {
        put_string(&mut out, &s.problem);
        put_string(&mut out, &s.variable);
        out.extend_from_slice(&s.target.to_le_bytes());
        for x in f {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn decode_layer(bytes: &[u8]) -> io::Result<(u32, Vec<SampleMeta>, Vec<Vec<f64>>)> {
    let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
    let mut r = Reader::new(bytes);
    if r.take(8)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let layer = r.u32()?;
    let n = r.u64()? as usize;
    let d = r.u64()? as usize;
    let mut samples = Vec::with_capacity(n.min(1 << 20));
    let mut feats = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let problem = r.string()?;
        let variable = r.string()?;
        let target = r.f64()?;
        let f = (0..d).map(|_| r.f64()).collect::<io::Result<Vec<_>>>()?;
        if !target.is_finite() || f.iter().any(|x| !x.is_finite()) {
            return Err(bad("non-finite value"));
        }
        samples.push(SampleMeta {
            problem,
            variable,
            target,
        });
        feats.push(f);
    }
    if !r.at_end() {
        return Err(bad("trailing bytes (shape mismatch)"));
    }
    Ok((layer, samples, feats))
}

/// Loads every file in `dir` that starts with the feature magic.
pub fn load_dir(dir: &Path) -> Result<ProbeDataset, ProbeError> {
    let ferr = |p: &Path, m: String| ProbeError::File {
        path: p.display().to_string(),
        message: m,
    };
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| ferr(dir, e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let mut ds = ProbeDataset::default();
    let mut first = true;
    for p in paths {
        let bytes = fs::read(&p).map_err(|e| ferr(&p, e.to_string()))?;
        if !bytes.starts_with(MAGIC) {
            continue;
        }
        let (layer, samples, feats) = decode_layer(&bytes).map_err(|e| ferr(&p, e.to_string()))?;
        if first {
            ds.samples = samples;
            first = false;
        } else if samples != ds.samples {
            return Err(ferr(&p, "sample list differs from other layers".into()));
        }
        if ds.layers.insert(layer, feats).is_some() {
            return Err(ferr(&p, format!("layer {layer} appears twice")));
        }
    }
    if ds.layers.is_empty() {
        return Err(ProbeError::EmptyDir(dir.display().to_string()));
    }
    Ok(ds)
}

pub fn write_dir(ds: &ProbeDataset, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    for (layer, feats) in &ds.layers {
        write_atomic(
            &dir.join(format!("layer_{layer:03}.feat")),
            &encode_layer(*layer, &ds.samples, feats),
        )?;
    }
    Ok(())
}

/// Stratified split: each problem keeps `clamp(round(ratio * m), 1, m)` of
/// its `m` samples for training. Returns ascending index lists.
pub fn split_dataset(
    samples: &[SampleMeta],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), ProbeError> {
    if samples.is_empty() {
        return Err(ProbeError::Empty);
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(ProbeError::Ratio);
    }
    let mut by_problem: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        by_problem.entry(&s.problem).or_default().push(i);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (problem, mut idx) in by_problem {
        let m = idx.len();
        let n_train = ((ratio * m as f64).round() as usize).clamp(1, m);
        idx.shuffle(&mut stream_rng(seed, &format!("split:{problem}"), 0, 0));
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Per-problem `(min, max)` of training targets.
pub type NormalizationParams = BTreeMap<String, (f64, f64)>;

pub fn normalization_params(samples: &[SampleMeta], train: &[usize]) -> NormalizationParams {
    let mut params: NormalizationParams = BTreeMap::new();
    for &i in train {
        let s = &samples[i];
        let e = params
            .entry(s.problem.clone())
            .or_insert((s.target, s.target));
        e.0 = e.0.min(s.target);
        e.1 = e.1.max(s.target);
    }
    params
}

/// `2 (y - min) / (max - min) - 1`, unclamped; 0 when `max == min`.
pub fn scale(y: f64, (lo, hi): (f64, f64)) -> f64 {
    if hi == lo {
        0.0
    } else {
        2.0 * (y - lo) / (hi - lo) - 1.0
    }
}

pub fn normalize_targets(
    samples: &[SampleMeta],
    train: &[usize],
    test: &[usize],
) -> (Vec<f64>, Vec<f64>, NormalizationParams) {
    let params = normalization_params(samples, train);
    let f = |idx: &[usize]| {
        idx.iter()
            .map(|&i| scale(samples[i].target, params[&samples[i].problem]))
            .collect::<Vec<_>>()
    };
    (f(train), f(test), params)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Samples per Adam update, in dataset order; `None` is full batch.
    pub batch_size: Option<usize>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 10,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: Some(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub layer: u32,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearProbe {
    pub fn zero(layer: u32, dim: usize) -> Self {
        LinearProbe {
            layer,
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    pub fn mse(&self, xs: &[&[f64]], ys: &[f64]) -> f64 {
        if ys.is_empty() {
            return 0.0;
        }
        xs.iter()
            .zip(ys)
            .map(|(x, y)| (self.predict(x) - y).powi(2))
            .sum::<f64>()
            / ys.len() as f64
    }

    /// Gradient of the mean squared error over the given rows; the last
    /// entry is the bias component.
    pub fn mse_grad(&self, xs: &[&[f64]], ys: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.weights.len() + 1];
        let n = ys.len() as f64;
        for (x, y) in xs.iter().zip(ys) {
            let r = 2.0 * (self.predict(x) - y) / n;
            for (gk, xk) in g.iter_mut().zip(x.iter()) {
                *gk += r * xk;
            }
            g[self.weights.len()] += r;
        }
        g
    }
}

/// Adam on the MSE from a zero initialization.
pub fn train_probe(
    layer: u32,
    xs: &[&[f64]],
    ys: &[f64],
    cfg: &ProbeConfig,
) -> Result<LinearProbe, ProbeError> {
    if ys.is_empty() || xs.len() != ys.len() {
        return Err(ProbeError::Empty);
    }
    let d = xs[0].len();
    if let Some(bad) = xs.iter().find(|x| x.len() != d) {
        return Err(ProbeError::Dim {
            expected: d,
            got: bad.len(),
        });
    }
    let mut probe = LinearProbe::zero(layer, d);
    let mut m = vec![0.0; d + 1];
    let mut v = vec![0.0; d + 1];
    let mut t = 0i32;
    let bs = cfg.batch_size.unwrap_or(ys.len()).max(1);
    for _ in 0..cfg.epochs {
        for (xb, yb) in xs.chunks(bs).zip(ys.chunks(bs)) {
            let g = probe.mse_grad(xb, yb);
            t += 1;
            let c1 = 1.0 - cfg.beta1.powi(t);
            let c2 = 1.0 - cfg.beta2.powi(t);
            for k in 0..=d {
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
                let step = cfg.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + cfg.eps);
                if k < d {
                    probe.weights[k] -= step;
                } else {
                    probe.bias -= step;
                }
            }
        }
    }
    Ok(probe)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerResult {
    pub layer: u32,
    pub train_mse: f64,
    pub test_mse: f64,
}

/// Trains an independent probe per layer on a shared split.
pub fn probe_sweep(
    ds: &ProbeDataset,
    layers: &[u32],
    ratio: f64,
    seed: u64,
    cfg: &ProbeConfig,
) -> Result<Vec<LayerResult>, ProbeError> {
    let (train, test) = split_dataset(&ds.samples, ratio, seed)?;
    let (ytr, yte, _) = normalize_targets(&ds.samples, &train, &test);
    layers
        .par_iter()
        .map(|&layer| {
            let feats = ds.layers.get(&layer).ok_or(ProbeError::MissingLayer(layer))?;
            let xtr: Vec<&[f64]> = train.iter().map(|&i| feats[i].as_slice()).collect();
            let xte: Vec<&[f64]> = test.iter().map(|&i| feats[i].as_slice()).collect();
            let probe = train_probe(layer, &xtr, &ytr, cfg)?;
            Ok(LayerResult {
                layer,
                train_mse: probe.mse(&xtr, &ytr),
                test_mse: probe.mse(&xte, &yte),
            })
        })
        .collect()
}

pub fn to_csv(results: &[LayerResult]) -> String {
    let mut s = String::from("layer,train_mse,test_mse\n");
    for r in results {
        s.push_str(&format!("{},{:e},{:e}\n", r.layer, r.train_mse, r.test_mse));
    }
    s
}

/// Whitespace-separated table for gnuplot.
pub fn to_dat(results: &[LayerResult]) -> String {
    let mut s = String::from("# layer train_mse test_mse\n");
    for r in results {
        s.push_str(&format!("{} {:e} {:e}\n", r.layer, r.train_mse, r.test_mse));
    }
    s
}

/// Targets `y = w . h` for one problem with uniform features.
pub fn synthetic_linear(n: usize, dim: usize, seed: u64) -> (ProbeDataset, Vec<f64>) {
    let mut rng = stream_rng(seed, "probe-linear", 0, 0);
    let w: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut ds = ProbeDataset::default();
    let mut feats = Vec::with_capacity(n);
    for i in 0..n {
        let h: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target = w.iter().zip(&h).map(|(a, b)| a * b).sum();
        ds.samples.push(SampleMeta {
            problem: "linear".into(),
            variable: format!("v{i}"),
            target,
        });
        feats.push(h);
    }
    ds.layers.insert(0, feats);
    (ds, w)
}

/// Layer 0 is noise; layer 1 carries the per-problem normalized target in
/// coordinate 0 next to noise coordinates.
pub fn synthetic_two_layer(problems: usize, per_problem: usize, dim: usize, seed: u64) -> ProbeDataset {
    let mut rng = stream_rng(seed, "probe-two-layer", 0, 0);
    let mut ds = ProbeDataset::default();
    let mut raw = Vec::new();
    for p in 0..problems {
        let offset = rng.random_range(-50.0..50.0);
        let spread = rng.random_range(1.0..20.0);
        for j in 0..per_problem {
            let u: f64 = rng.random_range(-1.0..1.0);
            ds.samples.push(SampleMeta {
                problem: format!("p{p:03}"),
                variable: format!("v{j}"),
                target: offset + spread * u,
            });
            raw.push(u);
        }
    }
    let (l0, l1): (Vec<_>, Vec<_>) = raw
        .iter()
        .map(|&u| {
            let noise = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
                (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
            };
            let a = noise(&mut rng);
            let mut b = noise(&mut rng);
            b[0] = u;
            (a, b)
        })
        .unzip();
    ds.layers.insert(0, l0);
    ds.layers.insert(1, l1);
    ds
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(problem: &str, target: f64) -> SampleMeta {
        SampleMeta {
            problem: problem.into(),
            variable: "x".into(),
            target,
        }
    }

    #[test]
    fn split_examples() {
        let s: Vec<_> = (0..10).map(|i| meta("a", i as f64)).chain([meta("b", 1.0)]).collect();
        let (tr, te) = split_dataset(&s, 0.8, 1).unwrap();
        assert_eq!(tr.len(), 9);
        assert_eq!(te.len(), 2);
        assert!(tr.contains(&10));
        assert_eq!(split_dataset(&s, 0.8, 1).unwrap(), (tr, te));
        assert!(split_dataset(&[], 0.8, 1).is_err());
        assert!(split_dataset(&s, 1.0, 1).is_err());
    }

    #[test]
    fn normalization_examples() {
        let s = vec![meta("a", 2.0), meta("a", 10.0), meta("a", 6.0), meta("a", 14.0), meta("c", 3.0), meta("c", 3.0)];
        let (ytr, yte, params) = normalize_targets(&s, &[0, 1, 4], &[2, 3, 5]);
        assert_eq!(ytr, vec![-1.0, 1.0, 0.0]);
        assert_eq!(yte, vec![0.0, 2.0, 0.0]);
        assert_eq!(params["a"], (2.0, 10.0));
    }

    #[test]
    fn zero_epochs_predicts_zero() {
        let xs: Vec<Vec<f64>> = vec![vec![1.0, 2.0], vec![-1.0, 0.5]];
        let xr: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let ys = [0.5, -1.0];
        let cfg = ProbeConfig {
            epochs: 0,
            ..ProbeConfig::default()
        };
        let p = train_probe(0, &xr, &ys, &cfg).unwrap();
        assert_eq!(p, LinearProbe::zero(0, 2));
        assert_eq!(p.mse(&xr, &ys), (0.25 + 1.0) / 2.0);
    }

    #[test]
    fn full_batch_is_invariant_to_duplication() {
        let (ds, _) = synthetic_linear(40, 4, 3);
        let xs: Vec<&[f64]> = ds.layers[&0].iter().map(Vec::as_slice).collect();
        let ys: Vec<f64> = ds.samples.iter().map(|s| s.target).collect();
        let x2: Vec<&[f64]> = xs.iter().chain(xs.iter()).copied().collect();
        let y2: Vec<f64> = ys.iter().chain(ys.iter()).copied().collect();
        let cfg = ProbeConfig {
            batch_size: None,
            ..ProbeConfig::default()
        };
        let a = train_probe(0, &xs, &ys, &cfg).unwrap();
        let b = train_probe(0, &x2, &y2, &cfg).unwrap();
        for (wa, wb) in a.weights.iter().zip(&b.weights).chain([(&a.bias, &b.bias)]) {
            assert!((wa - wb).abs() < 1e-12);
        }
        let ga = LinearProbe::zero(0, 4).mse_grad(&xs, &ys);
        let gb = LinearProbe::zero(0, 4).mse_grad(&x2, &y2);
        for (p, q) in ga.iter().zip(&gb) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let xs: Vec<&[f64]> = vec![&[1.0, 2.0], &[1.0]];
        assert!(matches!(
            train_probe(0, &xs, &[0.0, 0.0], &ProbeConfig::default()),
            Err(ProbeError::Dim { .. })
        ));
    }

    #[test]
    fn feature_files_round_trip() {
        let ds = synthetic_two_layer(3, 5, 4, 0);
        let dir = tempfile::tempdir().unwrap();
        write_dir(&ds, dir.path()).unwrap();
        assert_eq!(load_dir(dir.path()).unwrap(), ds);
        let f = dir.path().join("layer_000.feat");
        let bytes = fs::read(&f).unwrap();
        fs::write(&f, &bytes[..bytes.len() - 3]).unwrap();
        assert!(load_dir(dir.path()).is_err());
        let empty = tempfile::tempdir().unwrap();
        let e = load_dir(empty.path()).unwrap_err();
        assert!(e.to_string().contains(&empty.path().display().to_string()));
    }

    #[test]
    fn identical_layers_give_identical_mse() {
        let mut ds = synthetic_two_layer(4, 10, 3, 2);
        let l1 = ds.layers[&1].clone();
        ds.layers.insert(5, l1);
        let r = probe_sweep(&ds, &[1, 5], 0.8, 0, &ProbeConfig::default()).unwrap();
        assert!((r[0].test_mse - r[1].test_mse).abs() <= 1e-12);
        let swapped = probe_sweep(&ds, &[5, 1], 0.8, 0, &ProbeConfig::default()).unwrap();
        assert_eq!(swapped[0].layer, 5);
        assert_eq!(swapped[0].test_mse, r[1].test_mse);
    }

    #[test]
    fn numeric_targets_skip_booleans() {
        let vars = BTreeMap::from([
            ("a".to_string(), Value::Int(3)),
            ("b".to_string(), Value::Bool(true)),
            ("c".to_string(), Value::Float(f64::INFINITY)),
            ("d".to_string(), Value::Float(0.5)),
        ]);
        assert_eq!(
            numeric_targets(&vars),
            vec![("a".to_string(), 3.0), ("d".to_string(), 0.5)]
        );
    }
}

//! Surrogate evaluation: a probe classifier over synthetic videos, an
//! inception-style score from its class probabilities, and a Fréchet
//! distance over its 16-dimensional penultimate features.
//!
//! The probe is trained once per dataset and then frozen, so every generator
//! family in a comparison is scored by the same fixed metric.

use nalgebra::DMatrix;
use rand::Rng;

use crate::data::{SyntheticDataset, VideoTensor};
use crate::error::{Error, Result};
use crate::nn::{
    collect_grads, mean_grad_lists, seeded_rng, Conv3dLayer, LinearLayer, ParamStore,
};
use crate::optim::{Adam, AdamConfig};
use crate::tape::{Tape, Var};

/// Penultimate feature width; small enough that a few hundred samples give a
/// stable covariance estimate.
pub const FEATURE_DIM: usize = 16;
/// Optimizer settings shared by every training run in the crate.
pub const SHARED_ADAM: AdamConfig = AdamConfig { lr: 2e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 };

const PROBE_STEPS: usize = 400;
const PROBE_BATCH: usize = 32;

// ---------------------------------------------------------------------------
// Probe classifier
// ---------------------------------------------------------------------------

/// Two strided 3-D convolutions, a channel average, and two affine layers;
/// exposes both class probabilities and the 16-d tanh features before the
/// classification head.
#[derive(Debug, Clone)]
pub struct ProbeClassifier {
    c1: Conv3dLayer,
    c2: Conv3dLayer,
    f1: LinearLayer,
    f2: LinearLayer,
    store: ParamStore,
    num_classes: usize,
}

impl ProbeClassifier {
    pub fn new(num_classes: usize, seed: u64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::config("the probe needs at least 2 classes"));
        }
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(seed, 0, 0);
        let c1 = Conv3dLayer::new(&mut store, &mut rng, "probe.c1", 1, 8, 3, 2, 1)?;
        let c2 = Conv3dLayer::new(&mut store, &mut rng, "probe.c2", 8, FEATURE_DIM, 3, 2, 1)?;
        let f1 = LinearLayer::new(&mut store, &mut rng, "probe.f1", FEATURE_DIM, FEATURE_DIM)?;
        let f2 = LinearLayer::new(&mut store, &mut rng, "probe.f2", FEATURE_DIM, num_classes)?;
        Ok(ProbeClassifier { c1, c2, f1, f2, store, num_classes })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.num_params()
    }

    /// Tape forward to `(features, logits)`; used by training and inference.
    fn forward(&self, tape: &mut Tape, params: &[Var], video: Var) -> Result<(Var, Var)> {
        let h = self.c1.forward(tape, params, video)?;
        let h = tape.relu(h)?;
        let h = self.c2.forward(tape, params, h)?;
        let h = tape.relu(h)?;
        let pooled = tape.channel_mean(h)?;
        let features = self.f1.forward(tape, params, pooled)?;
        let features = tape.tanh(features)?;
        let logits = self.f2.forward(tape, params, features)?;
        Ok((features, logits))
    }

    /// Class probabilities and penultimate features for one video.
    pub fn probs_and_features(&self, video: &VideoTensor) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new();
        let params = self.store.register(&mut tape, false)?;
        let input = tape.constant(video.conv_input())?;
        let (features, logits) = self.forward(&mut tape, &params, input)?;
        let probs = softmax(tape.value(logits).data());
        Ok((probs, tape.value(features).data().to_vec()))
    }

    pub fn predict(&self, video: &VideoTensor) -> Result<usize> {
        let (probs, _) = self.probs_and_features(video)?;
        Ok(argmax(&probs))
    }

    /// Fraction of correctly classified samples.
    pub fn accuracy(&self, data: &SyntheticDataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::contract("accuracy over an empty dataset"));
        }
        let mut hits = 0usize;
        for i in 0..data.len() {
            if self.predict(data.video(i))? == data.label(i) {
                hits += 1;
            }
        }
        Ok(hits as f64 / data.len() as f64)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Trains a probe on `data` (splitting off a fifth of every class as
/// held-out), erroring if the held-out accuracy fails to clear chance level
/// by a sensible margin after the step budget.
pub fn train_probe(data: &SyntheticDataset, seed: u64) -> Result<ProbeClassifier> {
    let spec = data.spec();
    if spec.samples_per_class < 50 {
        return Err(Error::config(format!(
            "probe training needs at least 50 samples per class, got {}",
            spec.samples_per_class
        )));
    }
    let heldout_per_class = spec.samples_per_class / 5;
    let (train, heldout) = data.split_heldout(heldout_per_class)?;

    let mut probe = ProbeClassifier::new(spec.num_classes, seed)?;
    let mut adam = Adam::new(SHARED_ADAM, &probe.store)?;
    for step in 0..PROBE_STEPS {
        let mut rng = seeded_rng(seed, 1, step as u64);
        let mut per_sample = Vec::with_capacity(PROBE_BATCH);
        for _ in 0..PROBE_BATCH {
            let i = rng.gen_range(0..train.len());
            let mut tape = Tape::new();
            let params = probe.store.register(&mut tape, true)?;
            let input = tape.constant(train.video(i).conv_input())?;
            let (_, logits) = probe.forward(&mut tape, &params, input)?;
            let loss = tape.softmax_cross_entropy(logits, train.label(i))?;
            let grads = tape.backward(loss)?;
            per_sample.push(collect_grads(&grads, &params)?);
        }
        let mean = mean_grad_lists(&per_sample)?;
        adam.step(&mut probe.store, &mean)?;
    }

    let acc = probe.accuracy(&heldout)?;
    let chance = 1.0 / spec.num_classes as f64;
    if acc <= chance + 0.1 {
        return Err(Error::Training(format!(
            "probe held-out accuracy {acc:.3} did not clear chance level {chance:.3} after {PROBE_STEPS} steps"
        )));
    }
    Ok(probe)
}

// ---------------------------------------------------------------------------
// Inception-style score
// ---------------------------------------------------------------------------

/// `exp(mean KL(p(y|x) || p(y)))` per split; returns the mean and population
/// standard deviation over splits. Scores live in `[1, K]`.
pub fn inception_score(probs: &[Vec<f64>], splits: usize) -> Result<(f64, f64)> {
    if probs.is_empty() || splits == 0 {
        return Err(Error::contract("inception score needs rows and at least one split"));
    }
    if probs.len() % splits != 0 {
        return Err(Error::contract(format!(
            "{} rows are not divisible into {splits} splits",
            probs.len()
        )));
    }
    let k = probs[0].len();
    for row in probs {
        if row.len() != k {
            return Err(Error::contract("probability rows differ in width"));
        }
        if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
            return Err(Error::contract("probabilities must be finite and non-negative"));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::contract(format!("probability row sums to {sum}, not 1")));
        }
    }

    let per_split = probs.len() / splits;
    let mut scores = Vec::with_capacity(splits);
    for chunk in probs.chunks(per_split) {
        let mut marginal = vec![0.0; k];
        for row in chunk {
            for (m, &p) in marginal.iter_mut().zip(row) {
                *m += p;
            }
        }
        marginal.iter_mut().for_each(|m| *m /= per_split as f64);
        let mut mean_kl = 0.0;
        for row in chunk {
            let mut kl = 0.0;
            for (&p, &m) in row.iter().zip(&marginal) {
                if p > 0.0 {
                    kl += p * (p.ln() - m.ln());
                }
            }
            mean_kl += kl;
        }
        mean_kl /= per_split as f64;
        scores.push(mean_kl.exp());
    }
    Ok(mean_and_std(&scores))
}

fn mean_and_std(xs: &[f64]) -> (f64, f64) {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
    (mean, var.sqrt())
}

// ---------------------------------------------------------------------------
// Fréchet distance
// ---------------------------------------------------------------------------

/// Sample mean and covariance (unbiased, divisor `N - 1`) of feature rows.
pub fn gaussian_fit(rows: &[Vec<f64>]) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if rows.len() < 2 {
        return Err(Error::contract("covariance estimation needs at least 2 rows"));
    }
    let dim = rows[0].len();
    if rows.iter().any(|r| r.len() != dim) {
        return Err(Error::contract("feature rows differ in width"));
    }
    let n = rows.len() as f64;
    let mut mu = vec![0.0; dim];
    for row in rows {
        for (m, &x) in mu.iter_mut().zip(row) {
            *m += x;
        }
    }
    mu.iter_mut().for_each(|m| *m /= n);
    let mut cov = DMatrix::zeros(dim, dim);
    for row in rows {
        for i in 0..dim {
            let di = row[i] - mu[i];
            for j in 0..dim {
                cov[(i, j)] += di * (row[j] - mu[j]);
            }
        }
    }
    cov /= n - 1.0;
    Ok((mu, cov))
}

/// Symmetric PSD square root via eigendecomposition: eigenvalues down to
/// `-1e-10` are treated as rounded zeros; anything lower is rejected.
pub fn matrix_sqrt_psd(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !s.is_square() {
        return Err(Error::contract("matrix square root of a non-square matrix"));
    }
    let asym = (s - s.transpose()).abs().max();
    if asym > 1e-8 {
        return Err(Error::contract(format!(
            "matrix is not symmetric: max |S - S^T| = {asym:.3e}"
        )));
    }
    let eig = s.clone().symmetric_eigen();
    let mut values = eig.eigenvalues;
    for v in values.iter_mut() {
        if *v < -1e-10 {
            return Err(Error::contract(format!(
                "matrix is not positive semidefinite: eigenvalue {v:.3e}"
            )));
        }
        *v = v.max(0.0).sqrt();
    }
    let u = eig.eigenvectors;
    Ok(&u * DMatrix::from_diagonal(&values) * u.transpose())
}

/// `||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2})`, clamped at zero.
///
/// The cross term is computed as `Tr((S1^{1/2} S2 S1^{1/2})^{1/2})`, which
/// equals `Tr((S1 S2)^{1/2})` but keeps the square root argument symmetric.
pub fn frechet_distance(
    mu1: &[f64],
    s1: &DMatrix<f64>,
    mu2: &[f64],
    s2: &DMatrix<f64>,
) -> Result<f64> {
    let dim = mu1.len();
    if mu2.len() != dim || s1.nrows() != dim || s2.nrows() != dim {
        return Err(Error::contract(format!(
            "moment dimensions disagree: means {}/{}, covariances {}x{}/{}x{}",
            mu1.len(),
            mu2.len(),
            s1.nrows(),
            s1.ncols(),
            s2.nrows(),
            s2.ncols()
        )));
    }
    let sqrt1 = matrix_sqrt_psd(s1)?;
    let mut inner = &sqrt1 * s2 * &sqrt1;
    // Symmetrize away the rounding noise of the two products before the
    // second square root, which demands symmetry.
    inner = (&inner + inner.transpose()) * 0.5;
    let cross = matrix_sqrt_psd(&inner)?.trace();
    let mean_sq: f64 = mu1.iter().zip(mu2).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((mean_sq + s1.trace() + s2.trace() - 2.0 * cross).max(0.0))
}

// ---------------------------------------------------------------------------
// Generator evaluation
// ---------------------------------------------------------------------------

/// Frozen feature moments of the full real training split; the fixed side of
/// every Fréchet comparison.
#[derive(Debug, Clone)]
pub struct ReferenceStats {
    pub mu: Vec<f64>,
    pub cov: DMatrix<f64>,
}

pub fn reference_stats(probe: &ProbeClassifier, data: &SyntheticDataset) -> Result<ReferenceStats> {
    let mut rows = Vec::with_capacity(data.len());
    for video in data.videos() {
        let (_, features) = probe.probs_and_features(video)?;
        rows.push(features);
    }
    let (mu, cov) = gaussian_fit(&rows)?;
    Ok(ReferenceStats { mu, cov })
}

/// One evaluation of a generator's samples against the frozen reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricValues {
    pub is_mean: f64,
    pub is_std: f64,
    pub fid: f64,
}

/// Scores a batch of generated videos: inception-style score over `splits`
/// disjoint splits plus Fréchet distance of probe features to the reference.
pub fn evaluate_generator(
    probe: &ProbeClassifier,
    reference: &ReferenceStats,
    videos: &[VideoTensor],
    splits: usize,
) -> Result<MetricValues> {
    let mut probs = Vec::with_capacity(videos.len());
    let mut features = Vec::with_capacity(videos.len());
    for video in videos {
        let (p, f) = probe.probs_and_features(video)?;
        probs.push(p);
        features.push(f);
    }
    let (is_mean, is_std) = inception_score(&probs, splits)?;
    let (mu, cov) = gaussian_fit(&features)?;
    let fid = frechet_distance(&mu, &cov, &reference.mu, &reference.cov)?;
    Ok(MetricValues { is_mean, is_std, fid })
}

// ---------------------------------------------------------------------------

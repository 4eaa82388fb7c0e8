//! Sample-quality metrics computed in the frozen embedding space.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::embedding::{Embedder, InstanceStore};
use crate::error::{Error, Result};
use crate::models::Generator;
use crate::neighborhoods::SelectionResult;
use crate::rng::derive_rng;

const SYMMETRY_TOL: f64 = 1e-9;
const EIGEN_TOL: f64 = 1e-8;
const FID_CLAMP: f64 = 1e-8;
const ROUNDOFF_EIGEN: f64 = 16.0;

/// Gaussian moments of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSummary {
    pub mean: Vec<f64>,
    /// `d x d`, unbiased.
    pub cov: Tensor,
}

impl MomentSummary {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and unbiased covariance of the rows of `x`.
pub fn features_to_moments(x: &Tensor) -> Result<MomentSummary> {
    if x.rank() != 2 {
        return Err(Error::invalid("features must be a matrix"));
    }
    let (n, d) = (x.rows(), x.cols());
    if n < 2 {
        return Err(Error::TooFewPoints {
            required: 2,
            got: n,
        });
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = vec![0.0; d * d];
    let mut centred = vec![0.0; d];
    for i in 0..n {
        for (c, (v, m)) in centred.iter_mut().zip(x.row(i).iter().zip(&mean)) {
            *c = v - m;
        }
        for a in 0..d {
            for b in a..d {
                cov[a * d + b] += centred[a] * centred[b];
            }
        }
    }
    let denom = (n - 1) as f64;
    for a in 0..d {
        for b in a..d {
            let v = cov[a * d + b] / denom;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }
    Ok(MomentSummary {
        mean,
        cov: Tensor::matrix(d, d, cov)?,
    })
}

fn to_dmatrix(t: &Tensor) -> Result<DMatrix<f64>> {
    if t.rank() != 2 || t.rows() != t.cols() {
        return Err(Error::invalid(format!(
            "expected a square matrix, got shape {:?}",
            t.shape()
        )));
    }
    Ok(DMatrix::from_row_slice(t.rows(), t.cols(), t.data()))
}

fn from_dmatrix(m: &DMatrix<f64>) -> Tensor {
    let (r, c) = m.shape();
    let data: Vec<f64> = (0..r)
        .flat_map(|i| (0..c).map(move |j| m[(i, j)]))
        .collect();
    Tensor::matrix(r, c, data).expect("shape matches data")
}

fn sqrt_psd(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let scale = s.amax().max(1.0);
    let asym = (s - s.transpose()).amax();
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let sym = (s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.min();
    if min < -EIGEN_TOL * scale {
        return Err(Error::Indefinite(min));
    }
    // Roundoff-level eigenvalues count as zero.
    let floor = ROUNDOFF_EIGEN * s.nrows() as f64 * f64::EPSILON * eig.eigenvalues.amax();
    let roots = eig
        .eigenvalues
        .map(|l| if l > floor { l.sqrt() } else { 0.0 });
    let q = &eig.eigenvectors;
    let r = q * DMatrix::from_diagonal(&roots) * q.transpose();
    Ok((&r + r.transpose()) * 0.5)
}

/// Principal square root of a symmetric PSD matrix via eigendecomposition.
pub fn matrix_sqrt_psd(s: &Tensor) -> Result<Tensor> {
    Ok(from_dmatrix(&sqrt_psd(&to_dmatrix(s)?)?))
}

/// `|mu1 - mu2|^2 + Tr S1 + Tr S2 - 2 Tr (S1^1/2 S2 S1^1/2)^1/2`.
pub fn frechet_distance(m1: &MomentSummary, m2: &MomentSummary) -> Result<f64> {
    if m1.dim() != m2.dim() || m1.cov.shape() != m2.cov.shape() {
        return Err(Error::ShapeMismatch {
            op: "frechet_distance",
            left: m1.cov.shape().to_vec(),
            right: m2.cov.shape().to_vec(),
        });
    }
    let mean_term: f64 = m1
        .mean
        .iter()
        .zip(&m2.mean)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let s1 = to_dmatrix(&m1.cov)?;
    let s2 = to_dmatrix(&m2.cov)?;
    let r1 = sqrt_psd(&s1)?;
    let cross = &r1 * &s2 * &r1;
    let cross = (&cross + cross.transpose()) * 0.5;
    let cross_root = sqrt_psd(&cross)?;
    let value = mean_term + s1.trace() + s2.trace() - 2.0 * cross_root.trace();
    if value < 0.0 {
        if value > -FID_CLAMP {
            return Ok(0.0);
        }
        return Err(Error::invalid(format!(
            "Frechet distance evaluated to {value}; covariances are numerically unstable"
        )));
    }
    Ok(value)
}

/// FID between two feature matrices.
pub fn fid(a: &Tensor, b: &Tensor) -> Result<f64> {
    frechet_distance(&features_to_moments(a)?, &features_to_moments(b)?)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Distance from each row to its `k`-th nearest other row.
fn knn_radii(x: &Tensor, k: usize) -> Vec<f64> {
    let n = x.rows();
    let mut dists = Vec::with_capacity(n - 1);
    (0..n)
        .map(|i| {
            dists.clear();
            dists.extend(
                (0..n)
                    .filter(|&j| j != i)
                    .map(|j| euclidean(x.row(i), x.row(j))),
            );
            let (_, kth, _) = dists.select_nth_unstable_by(k - 1, f64::total_cmp);
            *kth
        })
        .collect()
}

/// Fraction of `probe` rows inside at least one `manifold` ball.
fn coverage(manifold: &Tensor, radii: &[f64], probe: &Tensor) -> f64 {
    let inside = (0..probe.rows())
        .filter(|&q| {
            (0..manifold.rows()).any(|i| euclidean(probe.row(q), manifold.row(i)) <= radii[i])
        })
        .count();
    inside as f64 / probe.rows() as f64
}

/// k-NN manifold precision and recall.
pub fn precision_recall(real: &Tensor, gen: &Tensor, k_pr: usize) -> Result<(f64, f64)> {
    if real.rank() != 2 || gen.rank() != 2 || real.cols() != gen.cols() {
        return Err(Error::ShapeMismatch {
            op: "precision_recall",
            left: real.shape().to_vec(),
            right: gen.shape().to_vec(),
        });
    }
    if k_pr < 1 {
        return Err(Error::invalid("k_pr must be >= 1"));
    }
    for set in [real, gen] {
        if set.rows() < k_pr + 1 {
            return Err(Error::TooFewPoints {
                required: k_pr + 1,
                got: set.rows(),
            });
        }
    }
    let precision = coverage(real, &knn_radii(real, k_pr), gen);
    let recall = coverage(gen, &knn_radii(gen, k_pr), real);
    Ok((precision, recall))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotGroup {
    Many,
    Med,
    Few,
}

/// Training-frequency boundaries: `> many` is many-shot, `>= few` is med-shot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thresholds {
    pub many: usize,
    pub few: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { many: 100, few: 20 }
    }
}

impl Thresholds {
    pub fn group(&self, freq: usize) -> ShotGroup {
        if freq > self.many {
            ShotGroup::Many
        } else if freq >= self.few {
            ShotGroup::Med
        } else {
            ShotGroup::Few
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupFid {
    pub fid: f64,
    pub real_count: usize,
    pub gen_count: usize,
}

fn pool_rows(x: &Tensor, labels: &[usize], keep: impl Fn(usize) -> bool) -> Vec<usize> {
    (0..x.rows()).filter(|&i| keep(labels[i])).collect()
}

/// FID per frequency group; groups with no samples are absent from the map.
pub fn stratified_fid(
    real: &Tensor,
    real_labels: &[usize],
    gen: &Tensor,
    gen_labels: &[usize],
    train_freqs: &[usize],
    thresholds: Thresholds,
) -> Result<BTreeMap<ShotGroup, GroupFid>> {
    if real_labels.len() != real.rows() || gen_labels.len() != gen.rows() {
        return Err(Error::invalid("one label per feature row is required"));
    }
    if let Some(&c) = real_labels
        .iter()
        .chain(gen_labels)
        .find(|&&c| c >= train_freqs.len())
    {
        return Err(Error::invalid(format!(
            "label {c} has no training frequency ({} classes)",
            train_freqs.len()
        )));
    }
    let mut out = BTreeMap::new();
    for group in [ShotGroup::Many, ShotGroup::Med, ShotGroup::Few] {
        let in_group = |c: usize| thresholds.group(train_freqs[c]) == group;
        let r = pool_rows(real, real_labels, in_group);
        let g = pool_rows(gen, gen_labels, in_group);
        if r.is_empty() && g.is_empty() {
            continue;
        }
        let fid = fid(&real.select_rows(&r), &gen.select_rows(&g))?;
        out.insert(
            group,
            GroupFid {
                fid,
                real_count: r.len(),
                gen_count: g.len(),
            },
        );
    }
    Ok(out)
}

/// Mean over groups of the mean pairwise Euclidean distance within a group.
pub fn diversity(groups: &[Tensor]) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::Empty("diversity groups"));
    }
    let mut total = 0.0;
    for g in groups {
        let n = g.rows();
        if n < 2 {
            return Err(Error::TooFewPoints {
                required: 2,
                got: n,
            });
        }
        let mut sum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                sum += euclidean(g.row(i), g.row(j));
            }
        }
        total += sum / (n * (n - 1) / 2) as f64;
    }
    Ok(total / groups.len() as f64)
}

/// Mixture of isotropic Gaussians centred on the training samples.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeOracle {
    support: Tensor,
    sigma: f64,
}

impl KdeOracle {
    pub fn new(support: Tensor, sigma: f64) -> Result<Self> {
        if support.rank() != 2 {
            return Err(Error::invalid("support must be a matrix"));
        }
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!(
                "bandwidth must be >= 0, got {sigma}"
            )));
        }
        Ok(Self { support, sigma })
    }

    /// `sigma = N^(-1/(d+4)) * mean marginal std`.
    pub fn scott(support: Tensor) -> Result<Self> {
        let sigma = scott_bandwidth(&support)?;
        Self::new(support, sigma)
    }

    pub fn support(&self) -> &Tensor {
        &self.support
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Tensor> {
        if n == 0 {
            return Err(Error::invalid("cannot draw zero KDE samples"));
        }
        let d = self.support.cols();
        let mut out = Vec::with_capacity(n * d);
        for _ in 0..n {
            let i = rng.random_range(0..self.support.rows());
            for &x in self.support.row(i) {
                let eps: f64 = rng.sample(StandardNormal);
                out.push(x + self.sigma * eps);
            }
        }
        Tensor::matrix(n, d, out)
    }
}

pub fn scott_bandwidth(support: &Tensor) -> Result<f64> {
    let (n, d) = (support.rows(), support.cols());
    if n < 2 {
        return Err(Error::TooFewPoints {
            required: 2,
            got: n,
        });
    }
    let m = features_to_moments(support)?;
    let mean_std = (0..d).map(|j| m.cov.get(j, j).sqrt()).sum::<f64>() / d as f64;
    Ok((n as f64).powf(-1.0 / (d as f64 + 4.0)) * mean_std)
}

pub fn kde_sample<R: Rng + ?Sized>(oracle: &KdeOracle, n: usize, rng: &mut R) -> Result<Tensor> {
    oracle.sample(n, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub samples_per_instance: usize,
    pub k_pr: usize,
    pub seed: u64,
    pub thresholds: Thresholds,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples_per_instance: 10,
            k_pr: 5,
            seed: 0,
            thresholds: Thresholds::default(),
        }
    }
}

/// Raw generated samples with the selection position that produced each row.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSet {
    pub samples: Tensor,
    pub groups: Vec<usize>,
    pub labels: Option<Vec<usize>>,
}

const EVAL_STREAM: u64 = 0x0e7a1;
const STRATIFIED_STREAM: u64 = 0x57a7;

/// Draws `per_instance` samples for each conditioning instance in `instances`,
/// using an independent noise stream per instance position.
pub fn generate_for_instances(
    generator: &Generator,
    store: &InstanceStore,
    instances: &[usize],
    per_instance: usize,
    seed: u64,
    stream: u64,
) -> Result<GeneratedSet> {
    if instances.is_empty() {
        return Err(Error::Empty("selection"));
    }
    if per_instance == 0 {
        return Err(Error::invalid("samples_per_instance must be >= 1"));
    }
    if let Some(&i) = instances.iter().find(|&&i| i >= store.len()) {
        return Err(Error::invalid(format!(
            "instance {i} out of range for a store of {}",
            store.len()
        )));
    }
    let class_conditional = generator.config().num_classes.is_some();
    if class_conditional && store.labels().is_none() {
        return Err(Error::invalid(
            "class-conditional generator needs a labelled store",
        ));
    }
    let noise = generator.noise();
    let mut z = Vec::with_capacity(instances.len() * per_instance * noise.z_dim);
    let mut rows = Vec::with_capacity(instances.len() * per_instance);
    let mut groups = Vec::with_capacity(rows.capacity());
    for (pos, &i) in instances.iter().enumerate() {
        let mut rng = derive_rng(seed, &[stream, pos as u64]);
        z.extend_from_slice(noise.sample(per_instance, &mut rng).data());
        rows.extend(std::iter::repeat_n(i, per_instance));
        groups.extend(std::iter::repeat_n(pos, per_instance));
    }
    let z = Tensor::matrix(rows.len(), noise.z_dim, z)?;
    let h = store.features().select_rows(&rows);
    let labels: Option<Vec<usize>> = class_conditional.then(|| {
        rows.iter()
            .map(|&i| store.labels().expect("checked")[i])
            .collect()
    });
    let samples = generator.forward(&z, &h, labels.as_deref())?;
    Ok(GeneratedSet {
        samples,
        groups,
        labels,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fid: f64,
    pub precision: f64,
    pub recall: f64,
    pub diversity: f64,
    /// Absent for unlabelled data.
    pub stratified_fid: Option<BTreeMap<ShotGroup, GroupFid>>,
    pub num_conditionings: usize,
    pub samples_per_instance: usize,
    pub num_generated: usize,
    pub num_reference: usize,
    pub k_pr: usize,
}

impl EvalReport {
    pub fn is_finite(&self) -> bool {
        [self.fid, self.precision, self.recall, self.diversity]
            .iter()
            .all(|v| v.is_finite())
            && self
                .stratified_fid
                .iter()
                .flat_map(|m| m.values())
                .all(|g| g.fid.is_finite())
    }
}

/// Metrics for an already generated set against a raw reference set.
pub fn evaluate_samples(
    generated: &GeneratedSet,
    reference: &Tensor,
    embedder: &Embedder,
    k_pr: usize,
) -> Result<EvalReport> {
    let gen_features = embedder.embed_matrix(&generated.samples)?;
    let ref_features = embedder.embed_matrix(reference)?;
    let fid = fid(&gen_features, &ref_features)?;
    let (precision, recall) = precision_recall(&ref_features, &gen_features, k_pr)?;

    let num_groups = generated.groups.iter().max().map_or(0, |g| g + 1);
    let mut by_group = vec![Vec::new(); num_groups];
    for (row, &g) in generated.groups.iter().enumerate() {
        by_group[g].push(row);
    }
    let group_features: Vec<Tensor> = by_group
        .iter()
        .filter(|rows| !rows.is_empty())
        .map(|rows| gen_features.select_rows(rows))
        .collect();
    let diversity = diversity(&group_features)?;

    Ok(EvalReport {
        fid,
        precision,
        recall,
        diversity,
        stratified_fid: None,
        num_conditionings: group_features.len(),
        samples_per_instance: generated.samples.rows() / group_features.len().max(1),
        num_generated: generated.samples.rows(),
        num_reference: reference.rows(),
        k_pr,
    })
}

/// Generates from the selected conditionings and scores against `reference`.
///
/// When both the store and the reference are labelled, a stratified FID is
/// added: for every reference sample of class `c` one sample is generated
/// from a uniformly drawn selected instance of class `c` (any stored instance
/// of `c` if the selection has none).
pub fn evaluate(
    generator: &Generator,
    store: &InstanceStore,
    selection: &SelectionResult,
    reference: &Tensor,
    reference_labels: Option<&[usize]>,
    embedder: &Embedder,
    config: &EvalConfig,
) -> Result<EvalReport> {
    let generated = generate_for_instances(
        generator,
        store,
        &selection.indices,
        config.samples_per_instance,
        config.seed,
        EVAL_STREAM,
    )?;
    let mut report = evaluate_samples(&generated, reference, embedder, config.k_pr)?;

    if let (Some(train_labels), Some(ref_labels)) = (store.labels(), reference_labels) {
        if ref_labels.len() != reference.rows() {
            return Err(Error::invalid(
                "one reference label per reference row is required",
            ));
        }
        let num_classes = train_labels
            .iter()
            .chain(ref_labels)
            .max()
            .map_or(0, |c| c + 1);
        let mut freqs = vec![0usize; num_classes];
        train_labels.iter().for_each(|&c| freqs[c] += 1);

        let mut rng = derive_rng(config.seed, &[STRATIFIED_STREAM]);
        let mut instances = Vec::with_capacity(ref_labels.len());
        for &c in ref_labels {
            let selected: Vec<usize> = selection
                .indices
                .iter()
                .copied()
                .filter(|&i| train_labels[i] == c)
                .collect();
            let pool = if selected.is_empty() {
                (0..store.len()).filter(|&i| train_labels[i] == c).collect()
            } else {
                selected
            };
            if pool.is_empty() {
                return Err(Error::invalid(format!(
                    "reference class {c} has no training instances"
                )));
            }
            instances.push(pool[rng.random_range(0..pool.len())]);
        }
        let strat = generate_for_instances(
            generator,
            store,
            &instances,
            1,
            config.seed,
            STRATIFIED_STREAM,
        )?;
        let gen_labels: Vec<usize> = instances.iter().map(|&i| train_labels[i]).collect();
        let gen_features = embedder.embed_matrix(&strat.samples)?;
        let ref_features = embedder.embed_matrix(reference)?;
        report.stratified_fid = Some(stratified_fid(
            &ref_features,
            ref_labels,
            &gen_features,
            &gen_labels,
            &freqs,
            config.thresholds,
        )?);
    }
    if !report.is_finite() {
        return Err(Error::invalid(format!(
            "non-finite evaluation report: {report:?}"
        )));
    }
    Ok(report)
}

//! Frozen feature maps producing unit-norm instance features.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    /// Leading `output_dim` coordinates of the raw sample.
    Identity,
    /// Fixed Gaussian projection.
    RandomProjection,
    /// Top principal directions of the mean-centred training data.
    Pca,
}

/// A fitted, immutable feature map. Outputs are always l2-normalised.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedder {
    kind: EmbedderKind,
    input_dim: usize,
    output_dim: usize,
    /// `input_dim x output_dim`, absent for identity.
    projection: Option<Tensor>,
    /// Centring vector, PCA only.
    mean: Option<Tensor>,
}

/// Relative eigenvalue floor below which a principal direction counts as empty.
const PCA_RANK_TOL: f64 = 1e-10;

impl Embedder {
    pub fn fit(data: &Tensor, kind: EmbedderKind, output_dim: usize, seed: u64) -> Result<Self> {
        if data.rank() != 2 {
            return Err(Error::invalid("embedder data must be a matrix"));
        }
        if output_dim == 0 {
            return Err(Error::invalid("output_dim must be at least 1"));
        }
        let (m, d) = (data.rows(), data.cols());
        match kind {
            EmbedderKind::Identity => {
                if output_dim > d {
                    return Err(Error::invalid(format!(
                        "identity embedder cannot produce {output_dim} dims from {d}-d input"
                    )));
                }
                Ok(Self {
                    kind,
                    input_dim: d,
                    output_dim,
                    projection: None,
                    mean: None,
                })
            }
            EmbedderKind::RandomProjection => {
                let mut rng = Rng::seed_from_u64(seed);
                Ok(Self {
                    kind,
                    input_dim: d,
                    output_dim,
                    projection: Some(Tensor::randn(&[d, output_dim], 1.0, &mut rng)),
                    mean: None,
                })
            }
            EmbedderKind::Pca => {
                if m < output_dim {
                    return Err(Error::invalid(format!(
                        "pca needs at least {output_dim} rows, got {m}"
                    )));
                }
                if output_dim > d {
                    return Err(Error::RankDeficient {
                        rank: d,
                        requested: output_dim,
                    });
                }
                fit_pca(data, output_dim)
            }
        }
    }

    /// Reassembles an embedder from stored parameters.
    pub fn from_parts(
        kind: EmbedderKind,
        input_dim: usize,
        output_dim: usize,
        projection: Option<Tensor>,
        mean: Option<Tensor>,
    ) -> Result<Self> {
        let expect_proj = kind != EmbedderKind::Identity;
        let expect_mean = kind == EmbedderKind::Pca;
        if projection.is_some() != expect_proj || mean.is_some() != expect_mean {
            return Err(Error::invalid(format!(
                "{kind:?} embedder parameters are incomplete"
            )));
        }
        if let Some(p) = &projection {
            if p.shape() != [input_dim, output_dim] {
                return Err(Error::ShapeDisagreement {
                    name: "embedder.projection".into(),
                    stored: p.shape().to_vec(),
                    expected: vec![input_dim, output_dim],
                });
            }
        }
        if let Some(mu) = &mean {
            if mu.shape() != [input_dim] {
                return Err(Error::ShapeDisagreement {
                    name: "embedder.mean".into(),
                    stored: mu.shape().to_vec(),
                    expected: vec![input_dim],
                });
            }
        }
        if kind == EmbedderKind::Identity && output_dim > input_dim {
            return Err(Error::invalid("identity output_dim exceeds input_dim"));
        }
        Ok(Self {
            kind,
            input_dim,
            output_dim,
            projection,
            mean,
        })
    }

    pub fn kind(&self) -> EmbedderKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn projection(&self) -> Option<&Tensor> {
        self.projection.as_ref()
    }

    pub fn mean(&self) -> Option<&Tensor> {
        self.mean.as_ref()
    }

    /// Unnormalised features.
    fn project(&self, x: &[f64]) -> Vec<f64> {
        match (&self.projection, &self.mean) {
            (None, _) => x[..self.output_dim].to_vec(),
            (Some(p), mean) => {
                let mut out = vec![0.0; self.output_dim];
                for (i, &xi) in x.iter().enumerate() {
                    let xi = match mean {
                        Some(mu) => xi - mu.data()[i],
                        None => xi,
                    };
                    for (o, w) in out.iter_mut().zip(p.row(i)) {
                        *o += xi * w;
                    }
                }
                out
            }
        }
    }

    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.embed_row(x, 0)
    }

    fn embed_row(&self, x: &[f64], row: usize) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::ShapeMismatch {
                op: "embed",
                left: vec![x.len()],
                right: vec![self.input_dim],
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!("row {row}: non-finite input")));
        }
        let mut h = self.project(x);
        let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroNorm { row });
        }
        h.iter_mut().for_each(|v| *v /= norm);
        Ok(h)
    }

    /// Embeds every row of a matrix, reporting all failing rows at once.
    pub fn embed_matrix(&self, data: &Tensor) -> Result<Tensor> {
        if data.rank() != 2 || data.cols() != self.input_dim {
            return Err(Error::ShapeMismatch {
                op: "embed_matrix",
                left: data.shape().to_vec(),
                right: vec![data.rows(), self.input_dim],
            });
        }
        let mut out = Vec::with_capacity(data.rows() * self.output_dim);
        let mut failed = Vec::new();
        for i in 0..data.rows() {
            match self.embed_row(data.row(i), i) {
                Ok(h) => out.extend(h),
                Err(Error::ZeroNorm { .. }) | Err(Error::InvalidArgument(_)) => failed.push(i),
                Err(e) => return Err(e),
            }
        }
        if !failed.is_empty() {
            return Err(Error::EmbedRows { rows: failed });
        }
        Tensor::matrix(data.rows(), self.output_dim, out)
    }

    pub fn embed_all(&self, data: &Tensor, labels: Option<Vec<usize>>) -> Result<InstanceStore> {
        if data.rank() != 2 {
            return Err(Error::invalid("dataset must be a matrix"));
        }
        let h = self.embed_matrix(data)?;
        InstanceStore::new(h, labels, data.clone())
    }
}

fn fit_pca(data: &Tensor, output_dim: usize) -> Result<Embedder> {
    let (m, d) = (data.rows(), data.cols());
    let mut mean = vec![0.0; d];
    for i in 0..m {
        for (mu, x) in mean.iter_mut().zip(data.row(i)) {
            *mu += x;
        }
    }
    mean.iter_mut().for_each(|mu| *mu /= m as f64);

    let mut cov = DMatrix::<f64>::zeros(d, d);
    for i in 0..m {
        let row = data.row(i);
        for a in 0..d {
            let xa = row[a] - mean[a];
            for b in a..d {
                cov[(a, b)] += xa * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            cov[(a, b)] = cov[(b, a)];
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let top = eig.eigenvalues[order[0]].max(0.0);
    let rank = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > PCA_RANK_TOL * top.max(f64::MIN_POSITIVE))
        .count();
    if top == 0.0 || rank < output_dim {
        return Err(Error::RankDeficient {
            rank: if top == 0.0 { 0 } else { rank },
            requested: output_dim,
        });
    }

    let mut proj = vec![0.0; d * output_dim];
    for (j, &col) in order.iter().take(output_dim).enumerate() {
        let v = eig.eigenvectors.column(col);
        // Sign convention: largest-magnitude entry positive.
        let pivot = (0..d)
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a)))
            .expect("d >= 1");
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            proj[i * output_dim + j] = sign * v[i];
        }
    }
    Ok(Embedder {
        kind: EmbedderKind::Pca,
        input_dim: d,
        output_dim,
        projection: Some(Tensor::matrix(d, output_dim, proj)?),
        mean: Some(Tensor::vector(mean)?),
    })
}

/// Unit-norm instance features with optional labels and the raw rows they
/// were computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceStore {
    features: Tensor,
    labels: Option<Vec<usize>>,
    raw: Tensor,
}

/// Tolerance on the unit-norm invariant.
pub const UNIT_NORM_TOL: f64 = 1e-9;

impl InstanceStore {
    pub fn new(features: Tensor, labels: Option<Vec<usize>>, raw: Tensor) -> Result<Self> {
        if features.rank() != 2 || raw.rank() != 2 {
            return Err(Error::invalid(
                "store features and raw data must be matrices",
            ));
        }
        if features.rows() != raw.rows() {
            return Err(Error::invalid(format!(
                "{} feature rows for {} raw rows",
                features.rows(),
                raw.rows()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != features.rows() {
                return Err(Error::invalid(format!(
                    "{} labels for {} instances",
                    l.len(),
                    features.rows()
                )));
            }
        }
        for i in 0..features.rows() {
            let n = features.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::invalid(format!("feature row {i} has norm {n}")));
            }
        }
        Ok(Self {
            features,
            labels,
            raw,
        })
    }

    /// Every instance shares the same conditioning vector `e_0`: the
    /// unconditional baseline expressed as instance conditioning.
    pub fn constant(raw: Tensor, labels: Option<Vec<usize>>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("feature dim must be at least 1"));
        }
        let mut h = Tensor::zeros(&[raw.rows(), dim]);
        for i in 0..raw.rows() {
            h.row_mut(i)[0] = 1.0;
        }
        Self::new(h, labels, raw)
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn raw(&self) -> &Tensor {
        &self.raw
    }

    /// `1 + max label`, or `None` when unlabelled.
    pub fn num_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().max().map_or(0, |m| m + 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rows(r: &[&[f64]]) -> Tensor {
        Tensor::from_rows(r).unwrap()
    }

    #[test]
    fn identity_normalises() {
        let data = rows(&[&[3.0, 4.0]]);
        let e = Embedder::fit(&data, EmbedderKind::Identity, 2, 0).unwrap();
        let h = e.embed(&[3.0, 4.0]).unwrap();
        assert!((h[0] - 0.6).abs() < 1e-15 && (h[1] - 0.8).abs() < 1e-15);
        assert_eq!(e.embed(&[0.0, 5.0]).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn identity_rejects_zero_vector_and_oversized_output() {
        let data = rows(&[&[1.0, 0.0]]);
        let e = Embedder::fit(&data, EmbedderKind::Identity, 2, 0).unwrap();
        assert!(matches!(e.embed(&[0.0, 0.0]), Err(Error::ZeroNorm { .. })));
        assert!(Embedder::fit(&data, EmbedderKind::Identity, 3, 0).is_err());
        assert!(Embedder::fit(&data, EmbedderKind::Identity, 0, 0).is_err());
    }

    #[test]
    fn pca_on_a_line_gives_unit_scalars() {
        let data = rows(&[&[1.0, 2.0], &[2.0, 4.0], &[-1.0, -2.0], &[4.0, 8.0]]);
        let e = Embedder::fit(&data, EmbedderKind::Pca, 1, 0).unwrap();
        for i in 0..data.rows() {
            let h = e.embed(data.row(i)).unwrap();
            assert_eq!(h.len(), 1);
            assert!((h[0].abs() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pca_reports_rank_deficiency() {
        let data = rows(&[&[1.0, 2.0], &[2.0, 4.0], &[3.0, 6.0]]);
        match Embedder::fit(&data, EmbedderKind::Pca, 2, 0) {
            Err(Error::RankDeficient { rank, requested }) => {
                assert_eq!((rank, requested), (1, 2));
            }
            other => panic!("expected rank deficiency, got {other:?}"),
        }
        let constant = rows(&[&[1.0, 1.0], &[1.0, 1.0]]);
        assert!(matches!(
            Embedder::fit(&constant, EmbedderKind::Pca, 1, 0),
            Err(Error::RankDeficient { rank: 0, .. })
        ));
    }

    #[test]
    fn pca_finds_dominant_axis() {
        let data = rows(&[&[-3.0, 0.1], &[3.0, -0.1], &[-1.0, -0.2], &[1.0, 0.2]]);
        let e = Embedder::fit(&data, EmbedderKind::Pca, 1, 0).unwrap();
        let p = e.projection().unwrap();
        assert!(p.get(0, 0).abs() > 0.99);
    }

    #[test]
    fn random_projection_is_seeded() {
        let data = rows(&[&[1.0, 2.0, 3.0]]);
        let a = Embedder::fit(&data, EmbedderKind::RandomProjection, 2, 11).unwrap();
        let b = Embedder::fit(&data, EmbedderKind::RandomProjection, 2, 11).unwrap();
        let c = Embedder::fit(&data, EmbedderKind::RandomProjection, 2, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn embed_all_builds_store() {
        let data = rows(&[&[1.0, 0.0], &[0.0, 2.0]]);
        let e = Embedder::fit(&data, EmbedderKind::Identity, 2, 0).unwrap();
        let store = e.embed_all(&data, Some(vec![0, 1])).unwrap();
        assert_eq!(store.features().data(), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(store.labels(), Some(&[0, 1][..]));
        assert_eq!(store.num_classes(), Some(2));
    }

    #[test]
    fn embed_all_aggregates_failing_rows() {
        let data = rows(&[&[0.0, 0.0], &[1.0, 1.0], &[0.0, 0.0]]);
        let e = Embedder::fit(&data, EmbedderKind::Identity, 2, 0).unwrap();
        match e.embed_all(&data, None) {
            Err(Error::EmbedRows { rows }) => assert_eq!(rows, vec![0, 2]),
            other => panic!("expected row errors, got {other:?}"),
        }
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(Tensor::from_rows::<Vec<f64>>(&[]).is_err());
        // All-zero features are not unit norm.
        assert!(InstanceStore::new(Tensor::zeros(&[1, 2]), None, Tensor::zeros(&[1, 2])).is_err());
        let e = Embedder::from_parts(EmbedderKind::Identity, 2, 2, None, None).unwrap();
        assert!(e.embed_all(&Tensor::zeros(&[1, 3]), None).is_err());
    }

    #[test]
    fn label_length_must_match() {
        let data = rows(&[&[1.0, 0.0], &[0.0, 2.0]]);
        let e = Embedder::fit(&data, EmbedderKind::Identity, 2, 0).unwrap();
        assert!(e.embed_all(&data, Some(vec![0])).is_err());
    }

    proptest! {
        #[test]
        fn rows_are_unit_norm_and_permutation_equivariant(
            pts in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, 0.1f64..5.0), 3..20),
            kind in prop_oneof![Just(EmbedderKind::Identity), Just(EmbedderKind::RandomProjection), Just(EmbedderKind::Pca)],
        ) {
            let data = Tensor::from_rows(&pts.iter().map(|&(a, b, c)| vec![a, b, c]).collect::<Vec<_>>()).unwrap();
            let Ok(e) = Embedder::fit(&data, kind, 2, 3) else { return Ok(()); };
            let Ok(h) = e.embed_matrix(&data) else { return Ok(()); };
            for i in 0..h.rows() {
                let n: f64 = h.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!((n - 1.0).abs() <= UNIT_NORM_TOL);
            }
            let perm: Vec<usize> = (0..data.rows()).rev().collect();
            let hp = e.embed_matrix(&data.select_rows(&perm)).unwrap();
            prop_assert_eq!(hp, h.select_rows(&perm));
        }
    }
}

//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use icgan_core::diffcore::Tensor;
use icgan_core::models::{Conditioning, Discriminator, Generator};
use icgan_core::rng::derive_rng;
use icgan_core::training::{
    discriminator_loss_and_grads, generator_loss_and_grads, LossVariant, ModelConfig,
};
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub const FD_STEP: f64 = 1e-5;
/// Below this magnitude a gradient is compared on an absolute scale.
pub const FD_FLOOR: f64 = 1e-6;

/// Small randomly initialised model pair with one input batch.
pub struct GradFixture {
    pub name: String,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub real: Tensor,
    pub z: Tensor,
    pub h: Tensor,
    pub labels: Option<Vec<usize>>,
    pub loss: LossVariant,
}

fn uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.5..1.5))
        .collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// One fixture per (conditioning, class mode, loss) combination for `seed`.
pub fn grad_fixtures(seed: u64) -> Vec<GradFixture> {
    let (batch, x_dim, h_dim, classes) = (5, 2, 3, 3);
    let cases = [
        (
            Conditioning::Projection,
            false,
            LossVariant::LogisticNonsaturating,
        ),
        (
            Conditioning::Projection,
            true,
            LossVariant::LogisticSaturating,
        ),
        (Conditioning::Concat, false, LossVariant::Hinge),
        (
            Conditioning::Concat,
            true,
            LossVariant::LogisticNonsaturating,
        ),
    ];
    cases
        .iter()
        .enumerate()
        .map(|(c, &(conditioning, class_conditional, loss))| {
            let mut rng = derive_rng(seed, &[0xfd, c as u64]);
            let model = ModelConfig {
                z_dim: 3,
                o_dim: 4,
                c_dim: 2,
                n_dim: 4,
                g_hidden: vec![6, 5],
                d_hidden: vec![6, 5],
                slope: 0.2,
                conditioning,
                ..ModelConfig::default()
            };
            let nc = class_conditional.then_some(classes);
            let generator = Generator::init(model.generator(h_dim, x_dim, nc), &mut rng).unwrap();
            let discriminator =
                Discriminator::init(model.discriminator(x_dim, h_dim, nc), &mut rng).unwrap();
            let labels = class_conditional
                .then(|| (0..batch).map(|_| rng.random_range(0..classes)).collect());
            GradFixture {
                name: format!("{conditioning:?}/class={class_conditional}/{loss:?}/seed={seed}"),
                generator,
                discriminator,
                real: uniform(batch, x_dim, &mut rng),
                z: uniform(batch, 3, &mut rng),
                h: uniform(batch, h_dim, &mut rng),
                labels,
                loss,
            }
        })
        .collect()
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

/// Largest relative error between backward and central-difference gradients
/// over every discriminator and generator scalar of the fixture, with the
/// count of scalars checked.
pub fn fd_max_error(f: &GradFixture) -> (f64, usize) {
    let y = f.labels.as_deref();
    let d_loss = |d: &Discriminator| {
        discriminator_loss_and_grads(&f.generator, d, &f.real, &f.z, &f.h, y, f.loss)
            .unwrap()
            .0
    };
    let g_loss = |g: &Generator| {
        generator_loss_and_grads(g, &f.discriminator, &f.z, &f.h, y, f.loss)
            .unwrap()
            .0
    };
    let (_, d_grads) = discriminator_loss_and_grads(
        &f.generator,
        &f.discriminator,
        &f.real,
        &f.z,
        &f.h,
        y,
        f.loss,
    )
    .unwrap();
    let (_, g_grads) =
        generator_loss_and_grads(&f.generator, &f.discriminator, &f.z, &f.h, y, f.loss).unwrap();

    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut d = f.discriminator.clone();
    for (p, grad) in d_grads.iter().enumerate() {
        for e in 0..grad.len() {
            let orig = d.params().tensors()[p].data()[e];
            d.params_mut().tensors_mut()[p].data_mut()[e] = orig + FD_STEP;
            let up = d_loss(&d);
            d.params_mut().tensors_mut()[p].data_mut()[e] = orig - FD_STEP;
            let down = d_loss(&d);
            d.params_mut().tensors_mut()[p].data_mut()[e] = orig;
            worst = worst.max(relative_error(
                grad.data()[e],
                (up - down) / (2.0 * FD_STEP),
            ));
            checked += 1;
        }
    }
    let mut g = f.generator.clone();
    for (p, grad) in g_grads.iter().enumerate() {
        for e in 0..grad.len() {
            let orig = g.params().tensors()[p].data()[e];
            g.params_mut().tensors_mut()[p].data_mut()[e] = orig + FD_STEP;
            let up = g_loss(&g);
            g.params_mut().tensors_mut()[p].data_mut()[e] = orig - FD_STEP;
            let down = g_loss(&g);
            g.params_mut().tensors_mut()[p].data_mut()[e] = orig;
            worst = worst.max(relative_error(
                grad.data()[e],
                (up - down) / (2.0 * FD_STEP),
            ));
            checked += 1;
        }
    }
    (worst, checked)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Radii of the k-NN balls around every row of `x`, excluding the row itself.
fn radii(x: &Tensor, k: usize) -> Vec<f64> {
    (0..x.rows())
        .map(|i| {
            let mut d: Vec<f64> = (0..x.rows())
                .filter(|&j| j != i)
                .map(|j| dist(x.row(i), x.row(j)))
                .collect();
            d.sort_by(f64::total_cmp);
            d[k - 1]
        })
        .collect()
}

fn coverage(manifold: &Tensor, radii: &[f64], probes: &Tensor) -> f64 {
    let inside = (0..probes.rows())
        .filter(|&j| (0..manifold.rows()).any(|i| dist(probes.row(j), manifold.row(i)) <= radii[i]))
        .count();
    inside as f64 / probes.rows() as f64
}

/// Double-loop k-NN manifold precision and recall.
pub fn brute_force_pr(real: &Tensor, gen: &Tensor, k: usize) -> (f64, f64) {
    let precision = coverage(real, &radii(real, k), gen);
    let recall = coverage(gen, &radii(gen, k), real);
    (precision, recall)
}

/// Pearson statistic of `counts` against `probs` and the 0.01-level critical value.
pub fn chi_square(counts: &[usize], probs: &[f64]) -> (f64, f64) {
    let n: usize = counts.iter().sum();
    let stat = counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| {
            let e = p * n as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    let df = (counts.len() - 1) as f64;
    let critical = ChiSquared::new(df).unwrap().inverse_cdf(0.99);
    (stat, critical)
}

pub fn chi_square_uniform(counts: &[usize]) -> (f64, f64) {
    chi_square(counts, &vec![1.0 / counts.len() as f64; counts.len()])
}

/// Row-by-row mean and unbiased covariance by direct double loops.
pub fn brute_moments(x: &Tensor) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (n, d) = (x.rows(), x.cols());
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            mean[j] += x.get(i, j);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![vec![0.0; d]; d];
    for a in 0..d {
        for b in 0..d {
            let s: f64 = (0..n)
                .map(|i| (x.get(i, a) - mean[a]) * (x.get(i, b) - mean[b]))
                .sum();
            cov[a][b] = s / (n - 1) as f64;
        }
    }
    (mean, cov)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

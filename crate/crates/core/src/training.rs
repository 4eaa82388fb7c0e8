//! Adversarial training over (instance, neighbour) pairs.
//!
//! Each step draws a batch of conditioning entries, samples one real neighbour
//! per entry from that entry's neighbourhood, and updates the discriminator
//! `d_updates` times before one generator update. Generated samples share the
//! conditioning batch of the real ones.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{AdamConfig, AdamState, Tape, Tensor, Var};
use crate::embedding::{Embedder, InstanceStore};
use crate::error::{Error, Result};
use crate::models::{
    one_hot, Conditioning, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig,
    OutputActivation,
};
use crate::neighborhoods::{
    build_neighborhoods, sample_conditioning, sample_neighbor, NeighborhoodIndex,
};
use crate::rng::{derive_rng, derived_state, Rng as StdRng, RngState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    #[default]
    LogisticNonsaturating,
    LogisticSaturating,
    Hinge,
}

impl std::str::FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic_nonsaturating" => Ok(Self::LogisticNonsaturating),
            "logistic_saturating" => Ok(Self::LogisticSaturating),
            "hinge" => Ok(Self::Hinge),
            other => Err(Error::invalid(format!("unknown loss variant {other:?}"))),
        }
    }
}

fn check_logits(real: Option<&Tensor>, fake: &Tensor) -> Result<()> {
    if fake.is_empty() || real.is_some_and(Tensor::is_empty) {
        return Err(Error::Empty("logit batch"));
    }
    if let Some(r) = real {
        if r.len() != fake.len() {
            return Err(Error::ShapeMismatch {
                op: "d_loss",
                left: r.shape().to_vec(),
                right: fake.shape().to_vec(),
            });
        }
    }
    Ok(())
}

/// Discriminator loss recorded on `tape`.
pub fn d_loss_on_tape(tape: &mut Tape, real: Var, fake: Var, variant: LossVariant) -> Result<Var> {
    check_logits(Some(tape.value(real)), tape.value(fake))?;
    let (r, f) = match variant {
        LossVariant::LogisticNonsaturating | LossVariant::LogisticSaturating => {
            let nr = tape.neg(real);
            (tape.softplus(nr), tape.softplus(fake))
        }
        LossVariant::Hinge => {
            let nr = tape.neg(real);
            let mr = tape.add_scalar(nr, 1.0);
            let mf = tape.add_scalar(fake, 1.0);
            (tape.relu(mr), tape.relu(mf))
        }
    };
    let (r, f) = (tape.mean(r), tape.mean(f));
    tape.add(r, f)
}

/// Generator loss recorded on `tape`; minimising it raises the fake logits.
pub fn g_loss_on_tape(tape: &mut Tape, fake: Var, variant: LossVariant) -> Result<Var> {
    check_logits(None, tape.value(fake))?;
    Ok(match variant {
        LossVariant::LogisticNonsaturating => {
            let nf = tape.neg(fake);
            let sp = tape.softplus(nf);
            tape.mean(sp)
        }
        // mean log(1 - sigmoid(l)) = -mean softplus(l)
        LossVariant::LogisticSaturating => {
            let sp = tape.softplus(fake);
            let m = tape.mean(sp);
            tape.neg(m)
        }
        LossVariant::Hinge => {
            let m = tape.mean(fake);
            tape.neg(m)
        }
    })
}

fn logits_tensor(l: &[f64]) -> Result<Tensor> {
    if l.is_empty() {
        return Err(Error::Empty("logit batch"));
    }
    Tensor::vector(l.to_vec())
}

pub fn d_loss(real: &[f64], fake: &[f64], variant: LossVariant) -> Result<f64> {
    let mut tape = Tape::new();
    let r = tape.constant(logits_tensor(real)?);
    let f = tape.constant(logits_tensor(fake)?);
    let l = d_loss_on_tape(&mut tape, r, f, variant)?;
    Ok(tape.value(l).data()[0])
}

pub fn g_loss(fake: &[f64], variant: LossVariant) -> Result<f64> {
    let mut tape = Tape::new();
    let f = tape.constant(logits_tensor(fake)?);
    let l = g_loss_on_tape(&mut tape, f, variant)?;
    Ok(tape.value(l).data()[0])
}

/// `p_c = softmax(ln f_c / T) = f_c^(1/T) / sum f^(1/T)`.
pub fn class_balanced_probs(freqs: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if freqs.is_empty() {
        return Err(Error::Empty("class frequencies"));
    }
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if let Some(c) = freqs.iter().position(|&f| !(f > 0.0) || !f.is_finite()) {
        return Err(Error::invalid(format!(
            "class {c} has frequency {}; log is undefined",
            freqs[c]
        )));
    }
    let logits: Vec<f64> = freqs.iter().map(|f| f.ln() / temperature).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

/// Draws a class from tempered frequencies.
#[derive(Debug, Clone)]
pub struct ClassBalancedSampler {
    pub freqs: Vec<f64>,
    pub temperature: f64,
    pub probs: Vec<f64>,
    dist: WeightedIndex<f64>,
}

impl ClassBalancedSampler {
    pub fn new(freqs: Vec<f64>, temperature: f64) -> Result<Self> {
        let probs = class_balanced_probs(&freqs, temperature)?;
        let dist = WeightedIndex::new(&probs)
            .map_err(|e| Error::invalid(format!("class probabilities: {e}")))?;
        Ok(Self {
            freqs,
            temperature,
            probs,
            dist,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.dist.sample(rng)
    }
}

/// The negation of the first raw coordinate: the vector-data stand-in for a
/// horizontal flip.
pub fn flip_sample(x: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    if let Some(first) = out.first_mut() {
        *first = -*first;
    }
    out
}

/// Conditioning entries available during training. With augmentation, entry
/// `M + i` holds the flipped features of instance `i` and shares `A_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningPool {
    features: Tensor,
    origin: Vec<usize>,
}

impl ConditioningPool {
    pub fn plain(store: &InstanceStore) -> Self {
        Self {
            features: store.features().clone(),
            origin: (0..store.len()).collect(),
        }
    }

    pub fn augmented(store: &InstanceStore, embedder: &Embedder) -> Result<Self> {
        let raw = store.raw();
        let mut flipped = Vec::with_capacity(raw.len());
        for i in 0..raw.rows() {
            flipped.extend(flip_sample(raw.row(i)));
        }
        let flipped = Tensor::matrix(raw.rows(), raw.cols(), flipped)?;
        let hf = embedder.embed_matrix(&flipped)?;
        let m = store.len();
        let mut data = store.features().data().to_vec();
        data.extend_from_slice(hf.data());
        Ok(Self {
            features: Tensor::matrix(2 * m, store.dim(), data)?,
            origin: (0..m).chain(0..m).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.origin.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origin.is_empty()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    /// Store instance whose neighbourhood entry `c` uses.
    pub fn origin(&self, c: usize) -> usize {
        self.origin[c]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub z_dim: usize,
    pub o_dim: usize,
    pub c_dim: usize,
    pub n_dim: usize,
    pub g_hidden: Vec<usize>,
    pub d_hidden: Vec<usize>,
    pub slope: f64,
    pub conditioning: Conditioning,
    pub output_activation: OutputActivation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            z_dim: 16,
            o_dim: 32,
            c_dim: 8,
            n_dim: 32,
            g_hidden: vec![128, 128],
            d_hidden: vec![128, 128],
            slope: 0.2,
            conditioning: Conditioning::Projection,
            output_activation: OutputActivation::Identity,
        }
    }
}

impl ModelConfig {
    pub fn generator(
        &self,
        cond_dim: usize,
        out_dim: usize,
        num_classes: Option<usize>,
    ) -> GeneratorConfig {
        GeneratorConfig {
            z_dim: self.z_dim,
            cond_dim,
            o_dim: self.o_dim,
            num_classes,
            c_dim: self.c_dim,
            hidden: self.g_hidden.clone(),
            out_dim,
            slope: self.slope,
            output_activation: self.output_activation,
        }
    }

    pub fn discriminator(
        &self,
        in_dim: usize,
        cond_dim: usize,
        num_classes: Option<usize>,
    ) -> DiscriminatorConfig {
        DiscriminatorConfig {
            in_dim,
            cond_dim,
            hidden: self.d_hidden.clone(),
            n_dim: self.n_dim,
            num_classes,
            conditioning: self.conditioning,
            slope: self.slope,
        }
    }
}

/// Source of the conditioning vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConditioningMode {
    /// Embedded training instances with k-NN neighbourhoods.
    #[default]
    Instance,
    /// One shared conditioning vector and `k = M`: the unconditional (or
    /// class-only) baseline.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub k: usize,
    pub loss: LossVariant,
    pub g_lr: f64,
    pub d_lr: f64,
    pub d_updates: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub flip_augmentation: bool,
    pub class_conditional: bool,
    pub class_balance_temperature: Option<f64>,
    pub conditioning: ConditioningMode,
    pub adam: AdamConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 50,
            loss: LossVariant::LogisticNonsaturating,
            g_lr: 2e-4,
            d_lr: 2e-4,
            d_updates: 1,
            batch_size: 64,
            steps: 5000,
            seed: 0,
            flip_augmentation: false,
            class_conditional: false,
            class_balance_temperature: None,
            conditioning: ConditioningMode::Instance,
            adam: AdamConfig {
                beta1: 0.5,
                beta2: 0.999,
                eps: 1e-8,
            },
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Error::Config {
            what: "train config",
            detail,
        };
        if self.k < 1 {
            return Err(bad("k must be >= 1".into()));
        }
        if self.d_updates < 1 {
            return Err(bad("d_updates must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(bad("batch_size must be >= 1".into()));
        }
        if !(self.g_lr >= 0.0 && self.d_lr >= 0.0) {
            return Err(bad(format!(
                "learning rates must be >= 0 ({}, {})",
                self.g_lr, self.d_lr
            )));
        }
        if let Some(t) = self.class_balance_temperature {
            if !(t > 0.0) {
                return Err(bad(format!(
                    "class balance temperature must be > 0, got {t}"
                )));
            }
            if !self.class_conditional {
                return Err(bad("class balancing requires class_conditional".into()));
            }
        }
        Ok(())
    }
}

fn label_var(
    tape: &mut Tape,
    num_classes: Option<usize>,
    y: Option<&[usize]>,
) -> Result<Option<Var>> {
    match (num_classes, y) {
        (Some(n), Some(y)) => Ok(Some(tape.constant(one_hot(y, n)?))),
        _ => Ok(None),
    }
}

fn take_grads(mut grads: crate::diffcore::Gradients, vars: &[Var]) -> Vec<Tensor> {
    vars.iter()
        .map(|&v| grads.take(v).expect("tracked leaf"))
        .collect()
}

/// Discriminator loss on one batch and its gradient for every discriminator
/// parameter. Fake samples are generated from `z` and treated as constants.
pub fn discriminator_loss_and_grads(
    generator: &Generator,
    discriminator: &Discriminator,
    real: &Tensor,
    z: &Tensor,
    h: &Tensor,
    y: Option<&[usize]>,
    variant: LossVariant,
) -> Result<(f64, Vec<Tensor>)> {
    let fake = generator.forward(z, h, y)?;
    let mut tape = Tape::new();
    let vars = discriminator.params().on_tape(&mut tape, true);
    let hv = tape.constant(h.clone());
    let yv = label_var(&mut tape, discriminator.config().num_classes, y)?;
    let rv = tape.constant(real.clone());
    let fv = tape.constant(fake);
    let lr = discriminator.forward_on_tape(&mut tape, &vars, rv, hv, yv)?;
    let lf = discriminator.forward_on_tape(&mut tape, &vars, fv, hv, yv)?;
    let loss = d_loss_on_tape(&mut tape, lr, lf, variant)?;
    let value = tape.value(loss).data()[0];
    Ok((value, take_grads(tape.backward(loss)?, &vars)))
}

/// Generator loss on one batch and its gradient for every generator
/// parameter, backpropagated through a frozen discriminator.
pub fn generator_loss_and_grads(
    generator: &Generator,
    discriminator: &Discriminator,
    z: &Tensor,
    h: &Tensor,
    y: Option<&[usize]>,
    variant: LossVariant,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let g_vars = generator.params().on_tape(&mut tape, true);
    let d_vars = discriminator.params().on_tape(&mut tape, false);
    let hv = tape.constant(h.clone());
    let yv = label_var(&mut tape, generator.config().num_classes, y)?;
    let zv = tape.constant(z.clone());
    let fake = generator.forward_on_tape(&mut tape, &g_vars, zv, hv, yv)?;
    let logits = discriminator.forward_on_tape(&mut tape, &d_vars, fake, hv, yv)?;
    let loss = g_loss_on_tape(&mut tape, logits, variant)?;
    let value = tape.value(loss).data()[0];
    Ok((value, take_grads(tape.backward(loss)?, &g_vars)))
}

/// One training batch: pool entries, the neighbour drawn for each and, in
/// class-conditional mode, that neighbour's label.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub conditionings: Vec<usize>,
    pub neighbors: Vec<usize>,
    pub labels: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub d_loss: f64,
    pub g_loss: f64,
}

/// Everything a training run mutates, plus the fixed data it samples from.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub generator: Generator,
    pub discriminator: Discriminator,
    g_opt: AdamState,
    d_opt: AdamState,
    store: InstanceStore,
    pool: ConditioningPool,
    neighborhoods: NeighborhoodIndex,
    /// Class sampler plus, per class, the pool entries of that class.
    balance: Option<(ClassBalancedSampler, Vec<Vec<usize>>)>,
    config: TrainConfig,
    step: usize,
    last_batch: Option<Batch>,
}

const INIT_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;

impl TrainState {
    pub fn new(
        config: TrainConfig,
        store: InstanceStore,
        pool: ConditioningPool,
        neighborhoods: NeighborhoodIndex,
    ) -> Result<Self> {
        config.validate()?;
        if neighborhoods.len() != store.len() {
            return Err(Error::invalid(
                "neighbourhood index does not match the store",
            ));
        }
        let num_classes = if config.class_conditional {
            Some(store.num_classes().ok_or_else(|| Error::Config {
                what: "train config",
                detail: "class_conditional requires a labelled dataset".into(),
            })?)
        } else {
            None
        };

        let mut init_rng = derive_rng(config.seed, &[INIT_STREAM]);
        let gcfg = config
            .model
            .generator(store.dim(), store.raw().cols(), num_classes);
        let dcfg = config
            .model
            .discriminator(store.raw().cols(), store.dim(), num_classes);
        let generator = Generator::init(gcfg, &mut init_rng)?;
        let discriminator = Discriminator::init(dcfg, &mut init_rng)?;
        let g_opt = AdamState::new(config.adam, generator.params().tensors());
        let d_opt = AdamState::new(config.adam, discriminator.params().tensors());

        let balance = match config.class_balance_temperature {
            None => None,
            Some(t) => {
                let labels = store.labels().expect("checked above");
                let n = num_classes.expect("checked above");
                let mut counts = vec![0.0; n];
                labels.iter().for_each(|&y| counts[y] += 1.0);
                let mut members = vec![Vec::new(); n];
                for c in 0..pool.len() {
                    members[labels[pool.origin(c)]].push(c);
                }
                // Classes absent from the data cannot be drawn.
                let freqs: Vec<f64> = counts
                    .iter()
                    .map(|&c| if c > 0.0 { c } else { f64::MIN_POSITIVE })
                    .collect();
                let mut sampler = ClassBalancedSampler::new(freqs, t)?;
                for (p, &c) in sampler.probs.iter_mut().zip(&counts) {
                    if c == 0.0 {
                        *p = 0.0;
                    }
                }
                sampler.dist = WeightedIndex::new(&sampler.probs)
                    .map_err(|e| Error::invalid(format!("class probabilities: {e}")))?;
                Some((sampler, members))
            }
        };

        Ok(Self {
            generator,
            discriminator,
            g_opt,
            d_opt,
            store,
            pool,
            neighborhoods,
            balance,
            config,
            step: 0,
            last_batch: None,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn store(&self) -> &InstanceStore {
        &self.store
    }

    pub fn pool(&self) -> &ConditioningPool {
        &self.pool
    }

    pub fn neighborhoods(&self) -> &NeighborhoodIndex {
        &self.neighborhoods
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// The batch used by the most recent discriminator update.
    pub fn last_batch(&self) -> Option<&Batch> {
        self.last_batch.as_ref()
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, rng: &mut R) -> Batch {
        let b = self.config.batch_size;
        let mut conditionings = Vec::with_capacity(b);
        let mut neighbors = Vec::with_capacity(b);
        let mut labels = self.config.class_conditional.then(|| Vec::with_capacity(b));
        for _ in 0..b {
            let c = match &self.balance {
                Some((sampler, members)) => {
                    let class = sampler.sample(rng);
                    let m = &members[class];
                    m[rng.random_range(0..m.len())]
                }
                None => sample_conditioning(self.pool.len(), rng),
            };
            let (n, y) =
                sample_neighbor(&self.neighborhoods, &self.store, self.pool.origin(c), rng);
            conditionings.push(c);
            neighbors.push(n);
            if let Some(l) = labels.as_mut() {
                l.push(y.expect("class-conditional stores are labelled"));
            }
        }
        Batch {
            conditionings,
            neighbors,
            labels,
        }
    }

    fn discriminator_update<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<f64> {
        let batch = self.sample_batch(rng);
        let h = self.pool.features().select_rows(&batch.conditionings);
        let real = self.store.raw().select_rows(&batch.neighbors);
        let z = self
            .generator
            .noise()
            .sample(batch.conditionings.len(), rng);
        let (loss, grads) = discriminator_loss_and_grads(
            &self.generator,
            &self.discriminator,
            &real,
            &z,
            &h,
            batch.labels.as_deref(),
            self.config.loss,
        )?;
        self.d_opt.step(
            self.discriminator.params_mut().tensors_mut(),
            &grads,
            self.config.d_lr,
        )?;
        self.last_batch = Some(batch);
        Ok(loss)
    }

    fn generator_update<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<f64> {
        let batch = self.sample_batch(rng);
        let h = self.pool.features().select_rows(&batch.conditionings);
        let z = self
            .generator
            .noise()
            .sample(batch.conditionings.len(), rng);
        let (loss, grads) = generator_loss_and_grads(
            &self.generator,
            &self.discriminator,
            &z,
            &h,
            batch.labels.as_deref(),
            self.config.loss,
        )?;
        self.g_opt.step(
            self.generator.params_mut().tensors_mut(),
            &grads,
            self.config.g_lr,
        )?;
        Ok(loss)
    }

    /// `d_updates` discriminator updates followed by one generator update.
    pub fn train_step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<StepMetrics> {
        let mut d_total = 0.0;
        for _ in 0..self.config.d_updates {
            d_total += self.discriminator_update(rng)?;
        }
        let g_loss = self.generator_update(rng)?;
        self.step += 1;
        Ok(StepMetrics {
            step: self.step,
            d_loss: d_total / self.config.d_updates as f64,
            g_loss,
        })
    }
}

/// Builds the conditioning store, pool and neighbourhoods for a dataset.
pub fn prepare(
    config: &TrainConfig,
    data: &Tensor,
    labels: Option<&[usize]>,
    embedder: &Embedder,
) -> Result<(InstanceStore, ConditioningPool, NeighborhoodIndex)> {
    config.validate()?;
    if config.class_conditional && labels.is_none() {
        return Err(Error::Config {
            what: "train config",
            detail: "class_conditional requires a labelled dataset".into(),
        });
    }
    let labels = labels.map(<[usize]>::to_vec);
    match config.conditioning {
        ConditioningMode::Instance => {
            let store = embedder.embed_all(data, labels)?;
            let pool = if config.flip_augmentation {
                ConditioningPool::augmented(&store, embedder)?
            } else {
                ConditioningPool::plain(&store)
            };
            let index = build_neighborhoods(&store, config.k)?;
            Ok((store, pool, index))
        }
        ConditioningMode::Constant => {
            let store = InstanceStore::constant(data.clone(), labels, embedder.output_dim())?;
            let pool = ConditioningPool::plain(&store);
            let index = build_neighborhoods(&store, store.len())?;
            Ok((store, pool, index))
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub generator: Generator,
    pub discriminator: Discriminator,
    /// Conditioning store used during training (constant rows for baselines).
    pub store: InstanceStore,
    pub metrics: Vec<StepMetrics>,
    /// Training stream position after the last step.
    pub rng: RngState,
}

/// Full pipeline: embed, build neighbourhoods, run `config.steps` steps.
pub fn train(
    config: &TrainConfig,
    data: &Tensor,
    labels: Option<&[usize]>,
    embedder: &Embedder,
) -> Result<TrainOutput> {
    train_with(config, data, labels, embedder, |_, _| Ok(()))
}

/// As [`train`], calling `on_step` after every step.
pub fn train_with(
    config: &TrainConfig,
    data: &Tensor,
    labels: Option<&[usize]>,
    embedder: &Embedder,
    mut on_step: impl FnMut(&TrainState, &StepMetrics) -> Result<()>,
) -> Result<TrainOutput> {
    let (store, pool, index) = prepare(config, data, labels, embedder)?;
    let mut state = TrainState::new(config.clone(), store, pool, index)?;
    let mut rng: StdRng = derive_rng(config.seed, &[TRAIN_STREAM]);
    let mut metrics = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let m = state.train_step(&mut rng)?;
        on_step(&state, &m)?;
        metrics.push(m);
    }
    Ok(TrainOutput {
        generator: state.generator,
        discriminator: state.discriminator,
        store: state.store,
        metrics,
        rng: derived_state(config.seed, &[TRAIN_STREAM], &rng),
    })
}

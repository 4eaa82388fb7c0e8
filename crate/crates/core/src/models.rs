//! Conditional generator `G(z, h[, y])` and discriminator `D(x, h[, y])`.
//!
//! Both are small dense networks. The generator maps the instance feature
//! through a learned affine layer (size `o_dim`), optionally appends a class
//! embedding (size `c_dim`), concatenates with the noise and runs a leaky-ReLU
//! trunk. The discriminator uses projection conditioning: its logit is
//! `psi(phi(x)) + <P_h h, phi(x)>`, where in class-conditional mode the
//! projected conditioning is `[P_h h ; P_y e_y]` with both halves of size
//! `n_dim / 2`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    #[default]
    Identity,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub z_dim: usize,
    /// Dimension of the instance features `h`.
    pub cond_dim: usize,
    pub o_dim: usize,
    /// Present in class-conditional mode.
    pub num_classes: Option<usize>,
    pub c_dim: usize,
    pub hidden: Vec<usize>,
    pub out_dim: usize,
    pub slope: f64,
    #[serde(default)]
    pub output_activation: OutputActivation,
}

impl GeneratorConfig {
    pub fn new(cond_dim: usize, out_dim: usize) -> Self {
        Self {
            z_dim: 16,
            cond_dim,
            o_dim: 32,
            num_classes: None,
            c_dim: 8,
            hidden: vec![128, 128],
            out_dim,
            slope: 0.2,
            output_activation: OutputActivation::Identity,
        }
    }

    fn validate(&self) -> Result<()> {
        let dims = [self.z_dim, self.cond_dim, self.o_dim, self.out_dim];
        if dims.contains(&0) || self.hidden.contains(&0) {
            return Err(Error::invalid("generator dims must be >= 1"));
        }
        if let Some(n) = self.num_classes {
            if n == 0 || self.c_dim == 0 {
                return Err(Error::invalid("class embedding dims must be >= 1"));
            }
        }
        Ok(())
    }

    fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut s = vec![
            ("inst.w".to_string(), vec![self.cond_dim, self.o_dim]),
            ("inst.b".to_string(), vec![self.o_dim]),
        ];
        let mut width = self.z_dim + self.o_dim;
        if let Some(n) = self.num_classes {
            s.push(("class.emb".into(), vec![n, self.c_dim]));
            width += self.c_dim;
        }
        for (l, &h) in self.hidden.iter().enumerate() {
            s.push((format!("trunk.{l}.w"), vec![width, h]));
            s.push((format!("trunk.{l}.b"), vec![h]));
            width = h;
        }
        s.push(("out.w".into(), vec![width, self.out_dim]));
        s.push(("out.b".into(), vec![self.out_dim]));
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// Inner product between projected conditioning and trunk features.
    #[default]
    Projection,
    /// Conditioning appended to the discriminator input.
    Concat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub in_dim: usize,
    pub cond_dim: usize,
    pub hidden: Vec<usize>,
    /// Width of the trunk feature vector, and of the projected conditioning.
    pub n_dim: usize,
    pub num_classes: Option<usize>,
    #[serde(default)]
    pub conditioning: Conditioning,
    pub slope: f64,
}

impl DiscriminatorConfig {
    pub fn new(in_dim: usize, cond_dim: usize) -> Self {
        Self {
            in_dim,
            cond_dim,
            hidden: vec![128, 128],
            n_dim: 32,
            num_classes: None,
            conditioning: Conditioning::Projection,
            slope: 0.2,
        }
    }

    fn validate(&self) -> Result<()> {
        if [self.in_dim, self.cond_dim, self.n_dim].contains(&0) || self.hidden.contains(&0) {
            return Err(Error::invalid("discriminator dims must be >= 1"));
        }
        if self.num_classes == Some(0) {
            return Err(Error::invalid("num_classes must be >= 1"));
        }
        if self.num_classes.is_some()
            && self.conditioning == Conditioning::Projection
            && !self.n_dim.is_multiple_of(2)
        {
            return Err(Error::invalid(format!(
                "class-conditional projection needs an even n_dim, got {}",
                self.n_dim
            )));
        }
        Ok(())
    }

    fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut width = self.in_dim;
        if self.conditioning == Conditioning::Concat {
            width += self.cond_dim + self.num_classes.unwrap_or(0);
        }
        let mut s = Vec::new();
        for (l, &h) in self.hidden.iter().enumerate() {
            s.push((format!("trunk.{l}.w"), vec![width, h]));
            s.push((format!("trunk.{l}.b"), vec![h]));
            width = h;
        }
        s.push(("feat.w".into(), vec![width, self.n_dim]));
        s.push(("feat.b".into(), vec![self.n_dim]));
        s.push(("psi.w".into(), vec![self.n_dim, 1]));
        s.push(("psi.b".into(), vec![1]));
        if self.conditioning == Conditioning::Projection {
            match self.num_classes {
                None => s.push(("proj.h".into(), vec![self.cond_dim, self.n_dim])),
                Some(n) => {
                    s.push(("proj.h".into(), vec![self.cond_dim, self.n_dim / 2]));
                    s.push(("proj.y".into(), vec![n, self.n_dim / 2]));
                }
            }
        }
        s
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl Params {
    fn init<R: Rng + ?Sized>(shapes: Vec<(String, Vec<usize>)>, rng: &mut R) -> Self {
        let (names, tensors) = shapes
            .into_iter()
            .map(|(name, shape)| {
                let t = if name.ends_with(".b") {
                    Tensor::zeros(&shape)
                } else if name.ends_with(".emb") {
                    Tensor::randn(&shape, 1.0, rng)
                } else {
                    // LeCun-normal on the fan-in.
                    Tensor::randn(&shape, 1.0 / (shape[0] as f64).sqrt(), rng)
                };
                (name, t)
            })
            .unzip();
        Self { names, tensors }
    }

    fn zeros(shapes: Vec<(String, Vec<usize>)>) -> Self {
        let (names, tensors) = shapes
            .into_iter()
            .map(|(name, shape)| {
                let t = Tensor::zeros(&shape);
                (name, t)
            })
            .unzip();
        Self { names, tensors }
    }

    fn from_named(
        shapes: Vec<(String, Vec<usize>)>,
        mut stored: Vec<(String, Tensor)>,
    ) -> Result<Self> {
        let mut tensors = Vec::with_capacity(shapes.len());
        let mut names = Vec::with_capacity(shapes.len());
        for (name, shape) in shapes {
            let pos = stored
                .iter()
                .position(|(n, _)| *n == name)
                .ok_or_else(|| Error::Corrupt(format!("missing parameter {name}")))?;
            let (_, t) = stored.swap_remove(pos);
            if t.shape() != shape.as_slice() {
                return Err(Error::ShapeDisagreement {
                    name,
                    stored: t.shape().to_vec(),
                    expected: shape,
                });
            }
            names.push(name);
            tensors.push(t);
        }
        if let Some((extra, _)) = stored.first() {
            return Err(Error::Corrupt(format!("unexpected parameter {extra}")));
        }
        Ok(Self { names, tensors })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &mut self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Puts every tensor on the tape, as parameters or constants.
    pub fn on_tape(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }
}

pub fn one_hot(labels: &[usize], num_classes: usize) -> Result<Tensor> {
    if labels.is_empty() {
        return Err(Error::Empty("labels"));
    }
    let mut t = Tensor::zeros(&[labels.len(), num_classes]);
    for (i, &y) in labels.iter().enumerate() {
        if y >= num_classes {
            return Err(Error::invalid(format!(
                "label {y} out of range for {num_classes} classes"
            )));
        }
        t.row_mut(i)[y] = 1.0;
    }
    Ok(t)
}

fn dense(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let a = tape.matmul(x, w)?;
    tape.bias_add(a, b)
}

fn check_batch(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn check_labels(
    op: &str,
    num_classes: Option<usize>,
    y: Option<&[usize]>,
    batch: usize,
) -> Result<()> {
    match (num_classes, y) {
        (None, Some(_)) => Err(Error::invalid(format!(
            "{op}: class labels given to an unconditional model"
        ))),
        (Some(_), None) => Err(Error::invalid(format!(
            "{op}: class-conditional model requires labels"
        ))),
        (Some(_), Some(y)) if y.len() != batch => Err(Error::invalid(format!(
            "{op}: {} labels for batch of {batch}",
            y.len()
        ))),
        _ => Ok(()),
    }
}

/// `d_z`-dimensional standard-normal prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseSpec {
    pub z_dim: usize,
}

impl NoiseSpec {
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Tensor {
        let mut t = Tensor::zeros(&[batch, self.z_dim]);
        for v in t.data_mut() {
            *v = rng.sample(StandardNormal);
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    config: GeneratorConfig,
    params: Params,
}

impl Generator {
    pub fn init<R: Rng + ?Sized>(config: GeneratorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let params = Params::init(config.shapes(), rng);
        Ok(Self { config, params })
    }

    pub fn zeros(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let params = Params::zeros(config.shapes());
        Ok(Self { config, params })
    }

    pub fn from_params(config: GeneratorConfig, stored: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let params = Params::from_named(config.shapes(), stored)?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn noise(&self) -> NoiseSpec {
        NoiseSpec {
            z_dim: self.config.z_dim,
        }
    }

    /// Records the forward pass; `vars` are this generator's parameters on `tape`.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        z: Var,
        h: Var,
        y_one_hot: Option<Var>,
    ) -> Result<Var> {
        let c = &self.config;
        let mut p = vars.iter().copied();
        let mut next = || p.next().expect("parameter count fixed by config");
        let (iw, ib) = (next(), next());
        let inst = dense(tape, h, iw, ib)?;
        let mut parts = vec![z, inst];
        if c.num_classes.is_some() {
            let emb = next();
            let y = y_one_hot.ok_or_else(|| Error::invalid("generator: missing labels"))?;
            parts.push(tape.matmul(y, emb)?);
        }
        let mut x = tape.concat(&parts, 1)?;
        for _ in &c.hidden {
            let (w, b) = (next(), next());
            let a = dense(tape, x, w, b)?;
            x = tape.leaky_relu(a, c.slope);
        }
        let (w, b) = (next(), next());
        let out = dense(tape, x, w, b)?;
        Ok(match c.output_activation {
            OutputActivation::Identity => out,
            OutputActivation::Tanh => tape.tanh(out),
        })
    }

    /// Pure forward pass: `z` is `B x d_z`, `h` is `B x d_e`.
    pub fn forward(&self, z: &Tensor, h: &Tensor, y: Option<&[usize]>) -> Result<Tensor> {
        check_batch("generator_forward", z, h)?;
        check_labels("generator_forward", self.config.num_classes, y, z.rows())?;
        if z.cols() != self.config.z_dim || h.cols() != self.config.cond_dim {
            return Err(Error::ShapeMismatch {
                op: "generator_forward",
                left: z.shape().to_vec(),
                right: h.shape().to_vec(),
            });
        }
        let mut tape = Tape::new();
        let vars = self.params.on_tape(&mut tape, false);
        let zv = tape.constant(z.clone());
        let hv = tape.constant(h.clone());
        let yv = match (self.config.num_classes, y) {
            (Some(n), Some(y)) => Some(tape.constant(one_hot(y, n)?)),
            _ => None,
        };
        let out = self.forward_on_tape(&mut tape, &vars, zv, hv, yv)?;
        Ok(tape.value(out).clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    config: DiscriminatorConfig,
    params: Params,
}

impl Discriminator {
    pub fn init<R: Rng + ?Sized>(config: DiscriminatorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let params = Params::init(config.shapes(), rng);
        Ok(Self { config, params })
    }

    pub fn from_params(config: DiscriminatorConfig, stored: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let params = Params::from_named(config.shapes(), stored)?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    /// Records the forward pass and returns `B x 1` logits.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x: Var,
        h: Var,
        y_one_hot: Option<Var>,
    ) -> Result<Var> {
        let c = &self.config;
        let mut p = vars.iter().copied();
        let mut next = || p.next().expect("parameter count fixed by config");

        let mut a = match c.conditioning {
            Conditioning::Projection => x,
            Conditioning::Concat => {
                let mut parts = vec![x, h];
                parts.extend(y_one_hot);
                tape.concat(&parts, 1)?
            }
        };
        for _ in &c.hidden {
            let (w, b) = (next(), next());
            let pre = dense(tape, a, w, b)?;
            a = tape.leaky_relu(pre, c.slope);
        }
        let (fw, fb) = (next(), next());
        let pre = dense(tape, a, fw, fb)?;
        let feat = tape.leaky_relu(pre, c.slope);
        let (pw, pb) = (next(), next());
        let logit = dense(tape, feat, pw, pb)?;

        if c.conditioning == Conditioning::Concat {
            return Ok(logit);
        }
        let ph = next();
        let mut proj = tape.matmul(h, ph)?;
        if c.num_classes.is_some() {
            let py = next();
            let y = y_one_hot.ok_or_else(|| Error::invalid("discriminator: missing labels"))?;
            let class_proj = tape.matmul(y, py)?;
            proj = tape.concat(&[proj, class_proj], 1)?;
        }
        let cond = tape.inner_product(proj, feat)?;
        tape.add(logit, cond)
    }

    /// Pure forward pass returning one logit per row.
    pub fn forward(&self, x: &Tensor, h: &Tensor, y: Option<&[usize]>) -> Result<Tensor> {
        check_batch("discriminator_forward", x, h)?;
        check_labels(
            "discriminator_forward",
            self.config.num_classes,
            y,
            x.rows(),
        )?;
        if x.cols() != self.config.in_dim || h.cols() != self.config.cond_dim {
            return Err(Error::ShapeMismatch {
                op: "discriminator_forward",
                left: x.shape().to_vec(),
                right: h.shape().to_vec(),
            });
        }
        let mut tape = Tape::new();
        let vars = self.params.on_tape(&mut tape, false);
        let xv = tape.constant(x.clone());
        let hv = tape.constant(h.clone());
        let yv = match (self.config.num_classes, y) {
            (Some(n), Some(y)) => Some(tape.constant(one_hot(y, n)?)),
            _ => None,
        };
        let out = self.forward_on_tape(&mut tape, &vars, xv, hv, yv)?;
        Ok(tape.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn unit_rows(batch: usize, dim: usize, rng: &mut crate::rng::Rng) -> Tensor {
        let mut h = Tensor::randn(&[batch, dim], 1.0, rng);
        for i in 0..batch {
            let n = h.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            h.row_mut(i).iter_mut().for_each(|v| *v /= n);
        }
        h
    }

    #[test]
    fn generator_output_shape() {
        let mut rng = rng_from_seed(0);
        let g = Generator::init(GeneratorConfig::new(2, 2), &mut rng).unwrap();
        let z = g.noise().sample(4, &mut rng);
        let h = unit_rows(4, 2, &mut rng);
        let out = g.forward(&z, &h, None).unwrap();
        assert_eq!(out.shape(), &[4, 2]);
        assert!(out.is_finite());
        assert_eq!(out, g.forward(&z, &h, None).unwrap());
    }

    #[test]
    fn zero_generator_outputs_zero() {
        let mut rng = rng_from_seed(1);
        let g = Generator::zeros(GeneratorConfig::new(3, 2)).unwrap();
        let z = g.noise().sample(5, &mut rng);
        let h = unit_rows(5, 3, &mut rng);
        assert_eq!(g.forward(&z, &h, None).unwrap(), Tensor::zeros(&[5, 2]));
    }

    #[test]
    fn label_mode_mismatch_is_an_error() {
        let mut rng = rng_from_seed(2);
        let g = Generator::init(GeneratorConfig::new(2, 2), &mut rng).unwrap();
        let z = g.noise().sample(2, &mut rng);
        let h = unit_rows(2, 2, &mut rng);
        assert!(g.forward(&z, &h, Some(&[0, 1])).is_err());

        let mut cc = GeneratorConfig::new(2, 2);
        cc.num_classes = Some(3);
        let g = Generator::init(cc, &mut rng).unwrap();
        assert!(g.forward(&z, &h, None).is_err());
        assert!(g.forward(&z, &h, Some(&[0, 3])).is_err());
        assert_eq!(g.forward(&z, &h, Some(&[0, 2])).unwrap().shape(), &[2, 2]);
    }

    #[test]
    fn generator_is_sensitive_to_conditioning() {
        let mut rng = rng_from_seed(3);
        let g = Generator::init(GeneratorConfig::new(2, 2), &mut rng).unwrap();
        let z = g.noise().sample(1, &mut rng);
        let h1 = Tensor::from_rows(&[[1.0, 0.0]]).unwrap();
        let h2 = Tensor::from_rows(&[[0.0, 1.0]]).unwrap();
        assert_ne!(
            g.forward(&z, &h1, None).unwrap(),
            g.forward(&z, &h2, None).unwrap()
        );
    }

    #[test]
    fn discriminator_logit_shape() {
        let mut rng = rng_from_seed(4);
        let d = Discriminator::init(DiscriminatorConfig::new(2, 2), &mut rng).unwrap();
        let x = Tensor::randn(&[8, 2], 1.0, &mut rng);
        let h = unit_rows(8, 2, &mut rng);
        assert_eq!(d.forward(&x, &h, None).unwrap().shape(), &[8, 1]);
    }

    #[test]
    fn zero_projection_reduces_to_unconditional_logit() {
        let mut rng = rng_from_seed(5);
        for classes in [None, Some(4)] {
            let mut cfg = DiscriminatorConfig::new(2, 3);
            cfg.num_classes = classes;
            let mut d = Discriminator::init(cfg, &mut rng).unwrap();
            for name in ["proj.h", "proj.y"] {
                if let Some(t) = d.params_mut().get_mut(name) {
                    *t = Tensor::zeros(t.shape());
                }
            }
            let x = Tensor::randn(&[6, 2], 1.0, &mut rng);
            let y = classes.map(|_| vec![0, 1, 2, 3, 0, 1]);
            let h1 = unit_rows(6, 3, &mut rng);
            let h2 = unit_rows(6, 3, &mut rng);
            let a = d.forward(&x, &h1, y.as_deref()).unwrap();
            let b = d.forward(&x, &h2, y.as_deref()).unwrap();
            assert_eq!(a, b);

            // psi(phi(x)) computed by hand from the trunk.
            let mut tape = Tape::new();
            let vars = d.params().on_tape(&mut tape, false);
            let mut a_ = tape.constant(x.clone());
            let mut i = 0;
            for _ in 0..=d.config().hidden.len() {
                let pre = dense(&mut tape, a_, vars[i], vars[i + 1]).unwrap();
                a_ = tape.leaky_relu(pre, 0.2);
                i += 2;
            }
            let psi = dense(&mut tape, a_, vars[i], vars[i + 1]).unwrap();
            assert_eq!(tape.value(psi), &a);
        }
    }

    #[test]
    fn class_conditional_projection_requires_even_n_dim() {
        let mut cfg = DiscriminatorConfig::new(2, 2);
        cfg.num_classes = Some(3);
        cfg.n_dim = 7;
        assert!(Discriminator::init(cfg.clone(), &mut rng_from_seed(0)).is_err());
        cfg.n_dim = 8;
        let d = Discriminator::init(cfg, &mut rng_from_seed(0)).unwrap();
        assert_eq!(d.params().get("proj.h").unwrap().shape(), &[2, 4]);
        assert_eq!(d.params().get("proj.y").unwrap().shape(), &[3, 4]);
    }

    #[test]
    fn concat_conditioning_has_no_projection() {
        let mut cfg = DiscriminatorConfig::new(2, 2);
        cfg.conditioning = Conditioning::Concat;
        cfg.num_classes = Some(2);
        let mut rng = rng_from_seed(6);
        let d = Discriminator::init(cfg, &mut rng).unwrap();
        assert!(d.params().get("proj.h").is_none());
        assert_eq!(d.params().get("trunk.0.w").unwrap().shape(), &[6, 128]);
        let x = Tensor::randn(&[3, 2], 1.0, &mut rng);
        let h = unit_rows(3, 2, &mut rng);
        assert_eq!(
            d.forward(&x, &h, Some(&[0, 1, 1])).unwrap().shape(),
            &[3, 1]
        );
    }

    #[test]
    fn from_params_checks_names_and_shapes() {
        let mut rng = rng_from_seed(7);
        let g = Generator::init(GeneratorConfig::new(2, 2), &mut rng).unwrap();
        let named: Vec<(String, Tensor)> = g
            .params()
            .iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        let back = Generator::from_params(g.config().clone(), named.clone()).unwrap();
        assert_eq!(back, g);

        let mut bad = named.clone();
        bad[0].1 = Tensor::zeros(&[1, 1]);
        assert!(matches!(
            Generator::from_params(g.config().clone(), bad),
            Err(Error::ShapeDisagreement { .. })
        ));
        let mut missing = named;
        missing.pop();
        assert!(Generator::from_params(g.config().clone(), missing).is_err());
    }
}

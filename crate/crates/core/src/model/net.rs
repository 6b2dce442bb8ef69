use std::collections::BTreeMap;

use lpcd_tensor::{BatchNormMode, BatchStats, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{HeadKind, NetworkConfig};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

pub type ParamMap = BTreeMap<String, Tensor>;
pub type VarMap = BTreeMap<String, Var>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Logits of one forward pass plus the batch statistics seen by every
/// training-mode normalization layer, keyed by layer prefix.
#[derive(Debug)]
pub struct ForwardPass {
    pub logits: Var,
    pub stats: Vec<(String, BatchStats)>,
}

/// Anything the training loop can optimize: a parameter map and a
/// differentiable pair-to-logits forward pass.
pub trait Classifier: Clone + Send + Sync {
    fn params(&self) -> &ParamMap;
    fn params_mut(&mut self) -> &mut ParamMap;
    /// `a` and `b` are `[N, ...]` batches; the result has shape `[N, 2]`.
    fn forward(&self, tape: &mut Tape, vars: &VarMap, a: &Tensor, b: &Tensor, mode: Mode) -> Result<ForwardPass>;
    /// Folds training-mode batch statistics into running estimates.
    fn absorb_stats(&mut self, _stats: &[(String, BatchStats)]) {}
}

/// Records every parameter of `params` on `tape` as a leaf.
pub fn bind(tape: &mut Tape, params: &ParamMap, requires_grad: bool) -> VarMap {
    params.iter().map(|(k, v)| (k.clone(), tape.leaf(v.clone(), requires_grad))).collect()
}

/// Change probabilities (softmax class 1) in evaluation mode.
pub fn predict<C: Classifier>(model: &C, a: &Tensor, b: &Tensor) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars = bind(&mut tape, model.params(), false);
    let pass = model.forward(&mut tape, &vars, a, b, Mode::Eval)?;
    let probs = tape.softmax(pass.logits)?;
    Ok(tape.value(probs).data().chunks(2).map(|row| row[1]).collect())
}

/// Shapes of every trainable tensor and every normalization buffer.
pub struct Layout {
    pub params: BTreeMap<String, Vec<usize>>,
    pub buffers: BTreeMap<String, Vec<usize>>,
}

impl Layout {
    pub fn of(config: &NetworkConfig) -> Self {
        let mut params = BTreeMap::new();
        let mut buffers = BTreeMap::new();
        let mut conv = |name: String, k: usize, c: usize, size: usize| {
            params.insert(format!("{name}.weight"), vec![k, c, size, size]);
        };
        let mut bn_names = Vec::new();
        let ch = config.channels();

        conv("stage1.conv".into(), ch[0], 3, 3);
        bn_names.push(("stage1.bn".to_string(), ch[0]));
        for s in 0..3 {
            let (cin, cout) = (ch[s], ch[s + 1]);
            for b in 0..config.stages[s].num_blocks {
                let p = block_prefix(s + 2, b + 1);
                let inp = if b == 0 { cin } else { cout };
                conv(format!("{p}.conv1"), cout, inp, 3);
                conv(format!("{p}.conv2"), cout, cout, 3);
                bn_names.push((format!("{p}.bn1"), cout));
                bn_names.push((format!("{p}.bn2"), cout));
                if b == 0 {
                    conv(format!("{p}.shortcut.conv"), cout, cin, 1);
                    bn_names.push((format!("{p}.shortcut.bn"), cout));
                }
            }
        }
        for (name, c) in bn_names {
            params.insert(format!("{name}.gamma"), vec![c]);
            params.insert(format!("{name}.beta"), vec![c]);
            buffers.insert(format!("{name}.running_mean"), vec![c]);
            buffers.insert(format!("{name}.running_var"), vec![c]);
        }
        let c = config.mlfc_channels();
        for s in config.head_stages() {
            let name = head_prefix(config.head, s);
            params.insert(format!("{name}.weight"), vec![c, ch[s - 1], 1, 1]);
            params.insert(format!("{name}.bias"), vec![c]);
        }
        let h = config.decision_hidden;
        params.insert("decision.fc1.weight".into(), vec![h, config.feature_len()]);
        params.insert("decision.fc1.bias".into(), vec![h]);
        params.insert("decision.fc2.weight".into(), vec![2, h]);
        params.insert("decision.fc2.bias".into(), vec![2]);
        Layout { params, buffers }
    }
}

pub fn block_prefix(stage: usize, block: usize) -> String {
    format!("stage{stage}.block{block}")
}

/// Name of the compression conv reading stage `s`.
pub fn head_prefix(head: HeadKind, stage: usize) -> String {
    match head {
        HeadKind::Mlfc => format!("mlfc.{stage}"),
        HeadKind::LastStage => "head".into(),
    }
}

/// The Siamese change-detection network with shared encoder weights.
#[derive(Clone, Debug, PartialEq)]
pub struct LpcdNet {
    config: NetworkConfig,
    params: ParamMap,
    buffers: ParamMap,
}

impl LpcdNet {
    /// Builds and initializes a network. Convolutions draw from
    /// U(-sqrt(6/fan_in), sqrt(6/fan_in)), linear weights from
    /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases and shifts start at 0,
    /// scales at 1, running variances at 1.
    pub fn build(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::of(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamMap::new();
        for (name, shape) in &layout.params {
            let fan_in: usize = shape[1..].iter().product();
            let t = if name.ends_with(".gamma") {
                Tensor::full(shape.clone(), 1.0)
            } else if name.ends_with(".beta") || name.ends_with(".bias") {
                Tensor::zeros(shape.clone())
            } else {
                let bound = if shape.len() == 4 {
                    (6.0 / fan_in as f64).sqrt()
                } else {
                    1.0 / (fan_in as f64).sqrt()
                };
                Tensor::from_fn(shape.clone(), |_| rng.gen_range(-bound..bound))
            };
            params.insert(name.clone(), t);
        }
        let buffers = layout
            .buffers
            .iter()
            .map(|(name, shape)| {
                let fill = if name.ends_with("running_var") { 1.0 } else { 0.0 };
                (name.clone(), Tensor::full(shape.clone(), fill))
            })
            .collect();
        Ok(LpcdNet {
            config: config.clone(),
            params,
            buffers,
        })
    }

    /// Assembles a network from existing tensors, checking every name and shape.
    pub fn from_parts(config: NetworkConfig, params: ParamMap, buffers: ParamMap) -> Result<Self> {
        config.validate()?;
        let layout = Layout::of(&config);
        check_names("parameter", &layout.params, &params)?;
        check_names("buffer", &layout.buffers, &buffers)?;
        Ok(LpcdNet { config, params, buffers })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn buffers(&self) -> &ParamMap {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut ParamMap {
        &mut self.buffers
    }

    pub fn into_parts(self) -> (NetworkConfig, ParamMap, ParamMap) {
        (self.config, self.params, self.buffers)
    }

    /// Number of trainable scalars (normalization buffers excluded).
    pub fn parameter_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Trainable scalars of the encoder alone (stem and residual stages).
    pub fn encoder_parameter_count(&self) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with("stage"))
            .map(|(_, v)| v.numel())
            .sum()
    }

    fn conv_bn(
        &self,
        tape: &mut Tape,
        vars: &VarMap,
        x: Var,
        conv: &str,
        bn: &str,
        stride: usize,
        padding: usize,
        mode: Mode,
        stats: &mut Vec<(String, BatchStats)>,
    ) -> Result<Var> {
        let y = tape.conv2d(x, vars[&format!("{conv}.weight")], None, stride, padding)?;
        let (gamma, beta) = (vars[&format!("{bn}.gamma")], vars[&format!("{bn}.beta")]);
        let bn_mode = match mode {
            Mode::Train => BatchNormMode::Train { eps: BN_EPS },
            Mode::Eval => BatchNormMode::Eval {
                running_mean: self.buffers[&format!("{bn}.running_mean")].data(),
                running_var: self.buffers[&format!("{bn}.running_var")].data(),
                eps: BN_EPS,
            },
        };
        let (out, s) = tape.batch_norm(y, gamma, beta, bn_mode)?;
        if let Some(s) = s {
            stats.push((bn.to_string(), s));
        }
        Ok(out)
    }

    /// Runs the shared encoder and returns the stage outputs U1..U4.
    pub fn encode(&self, tape: &mut Tape, vars: &VarMap, x: Var, mode: Mode, stats: &mut Vec<(String, BatchStats)>) -> Result<[Var; 4]> {
        let stem = self.conv_bn(tape, vars, x, "stage1.conv", "stage1.bn", 2, 1, mode, stats)?;
        let mut cur = tape.relu(stem);
        let mut outs = [cur; 4];
        for s in 0..3 {
            for b in 0..self.config.stages[s].num_blocks {
                let p = block_prefix(s + 2, b + 1);
                let stride = if b == 0 { self.config.stages[s].first_stride } else { 1 };
                let y = self.conv_bn(tape, vars, cur, &format!("{p}.conv1"), &format!("{p}.bn1"), stride, 1, mode, stats)?;
                let y = tape.relu(y);
                let y = self.conv_bn(tape, vars, y, &format!("{p}.conv2"), &format!("{p}.bn2"), 1, 1, mode, stats)?;
                let shortcut = if b == 0 {
                    let sc = format!("{p}.shortcut");
                    self.conv_bn(tape, vars, cur, &format!("{sc}.conv"), &format!("{sc}.bn"), stride, 0, mode, stats)?
                } else {
                    cur
                };
                let sum = tape.add(y, shortcut)?;
                cur = tape.relu(sum);
            }
            outs[s + 1] = cur;
        }
        Ok(outs)
    }

    /// Compresses the selected stage outputs into one `[N, feature_len]` matrix.
    pub fn compress(&self, tape: &mut Tape, vars: &VarMap, stages: &[Var; 4]) -> Result<Var> {
        let window = self.config.mlfc_window;
        let mut parts = Vec::new();
        for s in self.config.head_stages() {
            let name = head_prefix(self.config.head, s);
            let y = tape.conv2d(stages[s - 1], vars[&format!("{name}.weight")], Some(vars[&format!("{name}.bias")]), 1, 0)?;
            let y = tape.maxpool2d(y, window, window)?;
            parts.push(tape.flatten(y)?);
        }
        Ok(tape.concat(&parts, 1)?)
    }

    fn check_pair(&self, a: &Tensor, b: &Tensor) -> Result<()> {
        if a.shape() != b.shape() {
            return Err(lpcd_tensor::TensorError::ShapeMismatch {
                op: "lpcdnet_forward",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            }
            .into());
        }
        let [_, c, h, w] = a.dims4("lpcdnet_forward")?;
        let p = self.config.input_size;
        if c != 3 || h != p || w != p {
            return Err(lpcd_tensor::TensorError::InvalidShape {
                op: "lpcdnet_forward",
                shape: a.shape().to_vec(),
                reason: format!("expected [N, 3, {p}, {p}]"),
            }
            .into());
        }
        Ok(())
    }
}

fn check_names(kind: &str, expected: &BTreeMap<String, Vec<usize>>, got: &ParamMap) -> Result<()> {
    for (name, shape) in expected {
        match got.get(name) {
            None => return Err(Error::Config(format!("missing {kind} {name}"))),
            Some(t) if t.shape() != shape.as_slice() => {
                return Err(Error::Config(format!(
                    "{kind} {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )))
            }
            _ => {}
        }
    }
    if let Some(extra) = got.keys().find(|k| !expected.contains_key(*k)) {
        return Err(Error::Config(format!("unexpected {kind} {extra}")));
    }
    Ok(())
}

impl Classifier for LpcdNet {
    fn params(&self) -> &ParamMap {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamMap {
        &mut self.params
    }

    /// Both temporal batches go through the encoder as one stacked batch, so
    /// they share weights and, in training mode, normalization statistics.
    fn forward(&self, tape: &mut Tape, vars: &VarMap, a: &Tensor, b: &Tensor, mode: Mode) -> Result<ForwardPass> {
        self.check_pair(a, b)?;
        let n = a.shape()[0];
        let x = tape.constant(Tensor::stack_batch(&[a, b])?);
        let mut stats = Vec::new();
        let stages = self.encode(tape, vars, x, mode, &mut stats)?;
        let v = self.compress(tape, vars, &stages)?;
        let va = tape.narrow(v, 0, 0, n)?;
        let vb = tape.narrow(v, 0, n, n)?;
        let d = tape.abs_diff(va, vb)?;
        let h = tape.linear(d, vars["decision.fc1.weight"], Some(vars["decision.fc1.bias"]))?;
        let h = tape.relu(h);
        let logits = tape.linear(h, vars["decision.fc2.weight"], Some(vars["decision.fc2.bias"]))?;
        Ok(ForwardPass { logits, stats })
    }

    /// Exponential running averages with momentum 0.1; the variance estimate
    /// is unbiased.
    fn absorb_stats(&mut self, stats: &[(String, BatchStats)]) {
        for (name, s) in stats {
            let correction = if s.count > 1 { s.count as f64 / (s.count - 1) as f64 } else { 1.0 };
            if let Some(rm) = self.buffers.get_mut(&format!("{name}.running_mean")) {
                for (r, m) in rm.data_mut().iter_mut().zip(&s.mean) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
                }
            }
            if let Some(rv) = self.buffers.get_mut(&format!("{name}.running_var")) {
                for (r, v) in rv.data_mut().iter_mut().zip(&s.var) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * correction;
                }
            }
        }
    }
}

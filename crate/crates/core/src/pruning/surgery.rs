use std::collections::BTreeMap;

use lpcd_tensor::Tensor;

use crate::error::{Error, Result};
use crate::model::{block_prefix, head_prefix, LpcdNet, NetworkConfig, ParamMap};

/// Sum of absolute weights of each output filter of a `[K, ...]` weight.
pub fn l1_filter_scores(weight: &Tensor) -> Vec<f64> {
    let k = weight.shape().first().copied().unwrap_or(0);
    if k == 0 {
        return Vec::new();
    }
    let per = weight.numel() / k;
    weight.data().chunks(per).map(|f| f.iter().map(|v| v.abs()).sum()).collect()
}

/// Indices of the `keep` highest scores, ascending. Equal scores favour the
/// lower index.
pub fn retained(scores: &[f64], keep: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut kept = order[..keep.min(scores.len())].to_vec();
    kept.sort_unstable();
    kept
}

/// `floor(channels * (1 - ratio))`. The small guard keeps products that are
/// mathematically integral, such as 64 * 0.9375, from rounding down.
pub fn pruned_count(channels: usize, ratio: f64) -> usize {
    (channels as f64 * (1.0 - ratio) + 1e-9).floor() as usize
}

/// Retained output channels per pruned convolution, keyed by layer prefix.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PruneMask {
    pub retained: BTreeMap<String, Vec<usize>>,
}

struct Surgery {
    params: ParamMap,
    buffers: ParamMap,
    mask: PruneMask,
}

impl Surgery {
    fn take(&mut self, name: &str, axis: usize, keep: &[usize]) -> Result<()> {
        let t = self
            .params
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter {name}")))?;
        let t = t.index_select(axis, keep)?;
        self.params.insert(name.to_string(), t);
        Ok(())
    }

    fn outputs(&mut self, conv: &str, bn: Option<&str>, keep: &[usize]) -> Result<()> {
        self.take(&format!("{conv}.weight"), 0, keep)?;
        if self.params.contains_key(&format!("{conv}.bias")) {
            self.take(&format!("{conv}.bias"), 0, keep)?;
        }
        if let Some(bn) = bn {
            self.take(&format!("{bn}.gamma"), 0, keep)?;
            self.take(&format!("{bn}.beta"), 0, keep)?;
            for buf in ["running_mean", "running_var"] {
                let name = format!("{bn}.{buf}");
                let t = self.buffers[&name].index_select(0, keep)?;
                self.buffers.insert(name, t);
            }
        }
        self.mask.retained.insert(conv.to_string(), keep.to_vec());
        Ok(())
    }

    fn inputs(&mut self, conv: &str, keep: &[usize]) -> Result<()> {
        self.take(&format!("{conv}.weight"), 1, keep)
    }

    fn score(&self, conv: &str) -> Vec<f64> {
        l1_filter_scores(&self.params[&format!("{conv}.weight")])
    }
}

fn add_scores(acc: &mut [f64], s: &[f64]) {
    for (a, b) in acc.iter_mut().zip(s) {
        *a += b;
    }
}

/// Removes the lowest-L1 output channels of every convolution in `stage`
/// (1 = stem, 2..4 = residual stages) at a common `ratio`, then shrinks every
/// consumer so the network stays consistent.
///
/// Inside each block the middle channels follow the first conv's scores. The
/// channels flowing along the residual path of a stage share one mask ranked
/// by the summed scores of all their producers. When the narrower stage
/// reduces the compression width, the compression convs drop their weakest
/// outputs and the decision network loses the matching input features.
pub fn prune_stage(net: &LpcdNet, stage: usize, ratio: f64) -> Result<(LpcdNet, PruneMask)> {
    if !(1..=4).contains(&stage) {
        return Err(Error::InvalidArgument(format!("stage index {stage} outside 1..4")));
    }
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!("pruning ratio {ratio} outside [0, 1)")));
    }
    let old = net.config().clone();
    let channels = old.channels()[stage - 1];
    let keep = pruned_count(channels, ratio);
    if keep == 0 {
        return Err(Error::InvalidArgument(format!(
            "ratio {ratio} would remove all {channels} channels of stage {stage}"
        )));
    }
    let (_, params, buffers) = net.clone().into_parts();
    let mut s = Surgery {
        params,
        buffers,
        mask: PruneMask::default(),
    };

    // Producers of the stage output space.
    let mut producers: Vec<(String, String)> = Vec::new();
    if stage == 1 {
        producers.push(("stage1.conv".into(), "stage1.bn".into()));
    } else {
        let blocks = old.stages[stage - 2].num_blocks;
        for b in 1..=blocks {
            let p = block_prefix(stage, b);
            let mid = retained(&s.score(&format!("{p}.conv1")), keep);
            s.outputs(&format!("{p}.conv1"), Some(&format!("{p}.bn1")), &mid)?;
            s.inputs(&format!("{p}.conv2"), &mid)?;
            producers.push((format!("{p}.conv2"), format!("{p}.bn2")));
            if b == 1 {
                producers.push((format!("{p}.shortcut.conv"), format!("{p}.shortcut.bn")));
            }
        }
    }
    let mut total = vec![0.0; channels];
    for (conv, _) in &producers {
        add_scores(&mut total, &s.score(conv));
    }
    let out = retained(&total, keep);
    for (conv, bn) in &producers {
        s.outputs(conv, Some(bn), &out)?;
    }

    // Consumers of the stage output space.
    if stage >= 2 {
        for b in 2..=old.stages[stage - 2].num_blocks {
            s.inputs(&format!("{}.conv1", block_prefix(stage, b)), &out)?;
        }
    }
    if stage < 4 {
        let p = block_prefix(stage + 1, 1);
        s.inputs(&format!("{p}.conv1"), &out)?;
        s.inputs(&format!("{p}.shortcut.conv"), &out)?;
    }
    if old.head_stages().contains(&stage) {
        s.inputs(&head_prefix(old.head, stage), &out)?;
    }

    let mut config = old.clone();
    let mut ch = old.channels();
    ch[stage - 1] = keep;
    config.set_channels(ch);
    shrink_head(&old, &config, &mut s)?;

    let pruned = LpcdNet::from_parts(config, s.params, s.buffers)?;
    Ok((pruned, s.mask))
}

/// Drops compression channels when the recomputed width is smaller, together
/// with the decision-network columns that read them.
fn shrink_head(old: &NetworkConfig, new: &NetworkConfig, s: &mut Surgery) -> Result<()> {
    let (c_old, c_new) = (old.mlfc_channels(), new.mlfc_channels());
    if c_new == c_old {
        return Ok(());
    }
    let stages = old.head_stages();
    let mut total = vec![0.0; c_old];
    for &st in &stages {
        add_scores(&mut total, &s.score(&head_prefix(old.head, st)));
    }
    let keep = retained(&total, c_new);
    let mut columns = Vec::new();
    let mut offset = 0;
    for &st in &stages {
        let name = head_prefix(old.head, st);
        s.outputs(&name, None, &keep)?;
        let area = old.pooled_size(st).pow(2);
        for &c in &keep {
            columns.extend((0..area).map(|p| offset + c * area + p));
        }
        offset += c_old * area;
    }
    s.take("decision.fc1.weight", 1, &columns)
}

/// Total trainable scalars implied by a configuration, tallied layer by layer.
pub fn tally_parameters(config: &NetworkConfig) -> usize {
    let ch = config.channels();
    let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k;
    let bn = |c: usize| 2 * c;
    let mut n = conv(3, ch[0], 3) + bn(ch[0]);
    for s in 0..3 {
        let (cin, cout) = (ch[s], ch[s + 1]);
        n += conv(cin, cout, 3) + bn(cout) + conv(cout, cout, 3) + bn(cout) + conv(cin, cout, 1) + bn(cout);
        n += (config.stages[s].num_blocks - 1) * (2 * conv(cout, cout, 3) + 2 * bn(cout));
    }
    let c = config.mlfc_channels();
    for st in config.head_stages() {
        n += ch[st - 1] * c + c;
    }
    let h = config.decision_hidden;
    n + config.feature_len() * h + h + h * 2 + 2
}

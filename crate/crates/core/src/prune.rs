//! Structured magnitude pruning with lottery-ticket rewinding.
//!
//! Units are convolution filters when the network has convolutions, and
//! hidden dense neurons otherwise. Pruning a unit masks its incoming weights,
//! its bias and every downstream weight that reads its output channel, so the
//! unit drops out of the computation entirely even though its activation
//! `F(0)` may be nonzero.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{LayerSpec, Network, NetworkSpec};
use crate::train::{evaluate, train_model, Dataset, TrainConfig};

/// How a unit's incoming weights are reduced to a score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreRule {
    /// Signed sum.
    #[default]
    Sum,
    /// Sum of absolute values.
    L1,
}

impl FromStr for ScoreRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sum" => Ok(ScoreRule::Sum),
            "l1" => Ok(ScoreRule::L1),
            _ => Err(Error::UnknownName(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrunedKind {
    ConvFilters,
    DenseNeurons,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerScores {
    /// Index into the network's layer list.
    pub layer: usize,
    pub scores: Vec<f64>,
}

/// Which units of each prunable layer survive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitMask {
    pub kind: PrunedKind,
    pub layers: Vec<LayerUnitMask>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerUnitMask {
    pub layer: usize,
    pub keep: Vec<bool>,
}

impl UnitMask {
    pub fn pruned(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.keep.iter().filter(|&&k| !k).count())
            .sum()
    }

    /// True when no unit is pruned.
    pub fn is_empty(&self) -> bool {
        self.pruned() == 0
    }
}

/// Output units of a parametric layer.
fn unit_count(layer: &LayerSpec) -> usize {
    match *layer {
        LayerSpec::Dense { out_dim, .. } => out_dim,
        LayerSpec::Conv2d { out_channels, .. } => out_channels,
        _ => 0,
    }
}

/// The prunable layers: every convolution if there is one, else every dense
/// layer that feeds another parametric layer.
pub fn prunable_layers(spec: &NetworkSpec) -> Result<(PrunedKind, Vec<usize>)> {
    let convs: Vec<usize> = (0..spec.layers.len())
        .filter(|&i| matches!(spec.layers[i], LayerSpec::Conv2d { .. }))
        .collect();
    let (kind, layers) = if convs.is_empty() {
        let dense = (0..spec.layers.len())
            .filter(|&i| matches!(spec.layers[i], LayerSpec::Dense { .. }) && consumer(spec, i).is_some())
            .collect();
        (PrunedKind::DenseNeurons, dense)
    } else {
        (PrunedKind::ConvFilters, convs)
    };
    if layers.is_empty() {
        return Err(Error::Prune("network has no prunable layer".into()));
    }
    Ok((kind, layers))
}

/// The next parametric layer after `layer`.
fn consumer(spec: &NetworkSpec, layer: usize) -> Option<usize> {
    (layer + 1..spec.layers.len()).find(|&i| spec.layers[i].param_shape().is_some())
}

/// Per prunable layer, the score of each unit over its incoming weights.
pub fn score_units(net: &Network, rule: ScoreRule) -> Result<Vec<LayerScores>> {
    let (_, layers) = prunable_layers(net.spec())?;
    Ok(layers
        .into_iter()
        .map(|layer| {
            let slot = net.slots()[layer].as_ref().expect("prunable layers have parameters");
            let fan_in = net.spec().layers[layer].fan_in().expect("parametric");
            let scores = net.params()[slot.weights.clone()]
                .chunks(fan_in)
                .map(|row| match rule {
                    ScoreRule::Sum => row.iter().sum(),
                    ScoreRule::L1 => row.iter().map(|w| w.abs()).sum(),
                })
                .collect();
            LayerScores { layer, scores }
        })
        .collect())
}

/// Indices of the `count` lowest scores, ascending; ties go to the lower index.
pub fn lowest_scoring(scores: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut chosen = order[..count.min(scores.len())].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Masks `floor(p · units)` lowest-scoring units in every prunable layer.
/// Units that are already masked rank lowest, so re-applying the same `p`
/// leaves the mask unchanged.
pub fn apply_prune(net: &Network, p: f64, rule: ScoreRule) -> Result<(Network, UnitMask)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Prune(format!("fraction {p} outside [0, 1)")));
    }
    let (kind, _) = prunable_layers(net.spec())?;
    let spec = net.spec();
    let mut mask = net
        .mask()
        .map(<[bool]>::to_vec)
        .unwrap_or_else(|| vec![true; net.params().len()]);
    let mut unit_mask = UnitMask {
        kind,
        layers: Vec::new(),
    };
    for LayerScores { layer, mut scores } in score_units(net, rule)? {
        let slot = net.slots()[layer].clone().expect("parametric");
        let units = scores.len();
        for (j, s) in scores.iter_mut().enumerate() {
            if !mask[slot.bias.start + j] {
                *s = f64::NEG_INFINITY;
            }
        }
        let count = (p * units as f64).floor() as usize;
        if count >= units {
            return Err(Error::Prune(format!("layer {layer} would lose all {units} units")));
        }
        let mut keep = vec![true; units];
        for j in lowest_scoring(&scores, count) {
            keep[j] = false;
        }
        mask_units(spec, net, layer, &keep, &mut mask);
        unit_mask.layers.push(LayerUnitMask { layer, keep });
    }
    let mut pruned = net.clone();
    pruned.set_mask(Some(mask))?;
    Ok((pruned, unit_mask))
}

/// Clears the mask entries of every pruned unit's incoming weights, bias and
/// downstream reads.
fn mask_units(spec: &NetworkSpec, net: &Network, layer: usize, keep: &[bool], mask: &mut [bool]) {
    let slot = net.slots()[layer].as_ref().expect("parametric");
    let fan_in = spec.layers[layer].fan_in().expect("parametric");
    let next = consumer(spec, layer).map(|c| {
        let next_slot = net.slots()[c].as_ref().expect("parametric");
        let row = spec.layers[c].fan_in().expect("parametric");
        (next_slot.weights.clone(), row, row / unit_count(&spec.layers[layer]))
    });
    for (j, _) in keep.iter().enumerate().filter(|(_, &k)| !k) {
        let w = slot.weights.start + j * fan_in;
        mask[w..w + fan_in].fill(false);
        mask[slot.bias.start + j] = false;
        if let Some((weights, row, block)) = &next {
            for r in (weights.start..weights.end).step_by(*row) {
                mask[r + j * block..r + (j + 1) * block].fill(false);
            }
        }
    }
}

/// `original` with the mask of `pruned` installed: surviving parameters keep
/// their initial values bit for bit.
pub fn rewind(original: &Network, pruned: &Network) -> Result<Network> {
    if original.spec() != pruned.spec() {
        return Err(Error::Prune("rewind target has a different architecture".into()));
    }
    let mut ticket = original.clone();
    ticket.set_mask(pruned.mask().map(<[bool]>::to_vec))?;
    Ok(ticket)
}

/// Pruning fractions, one training run each.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneSchedule {
    pub fractions: Vec<f64>,
}

impl Default for PruneSchedule {
    fn default() -> Self {
        Self {
            fractions: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
        }
    }
}

impl PruneSchedule {
    pub fn new(fractions: Vec<f64>) -> Result<Self> {
        let s = Self { fractions };
        s.validate()?;
        Ok(s)
    }

    /// Each fraction in `[0, 1)`, strictly increasing, at least one.
    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() {
            return Err(Error::Prune("empty schedule".into()));
        }
        if let Some(p) = self.fractions.iter().find(|p| !(0.0..1.0).contains(*p)) {
            return Err(Error::Prune(format!("fraction {p} outside [0, 1)")));
        }
        if self.fractions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Prune("fractions must be strictly increasing".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneRow {
    pub p: f64,
    pub params_remaining: usize,
    pub test_acc: f64,
    /// Epochs spent retraining the rewound ticket (0 when nothing was pruned
    /// and the unpruned run was reused).
    pub retrain_epochs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneReport {
    pub kind: PrunedKind,
    pub rows: Vec<PruneRow>,
}

impl PruneReport {
    /// CSV with header `p,params_remaining,test_acc`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("p,params_remaining,test_acc\n");
        for r in &self.rows {
            writeln!(out, "{},{},{}", r.p, r.params_remaining, r.test_acc).unwrap();
        }
        out
    }
}

/// For each fraction: train from the seeded initialization, prune the trained
/// network to that fraction, rewind the survivors to their initial values and
/// retrain. The unpruned run is shared by every fraction.
pub fn lottery_run(
    cfg: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    schedule: &PruneSchedule,
    rule: ScoreRule,
    mut on_row: impl FnMut(&PruneRow),
) -> Result<PruneReport> {
    schedule.validate()?;
    let original = cfg.build_network()?;
    let (kind, _) = prunable_layers(original.spec())?;
    let trained = train_model(original.clone(), train, test, cfg, |_| {})?.network;
    let unpruned_acc = evaluate(&trained, test)?;
    let mut rows = Vec::with_capacity(schedule.fractions.len());
    for &p in &schedule.fractions {
        let (pruned, units) = apply_prune(&trained, p, rule)?;
        let row = if units.is_empty() {
            PruneRow {
                p,
                params_remaining: trained.param_count().total,
                test_acc: unpruned_acc,
                retrain_epochs: 0,
            }
        } else {
            let ticket = rewind(&original, &pruned)?;
            let retrained = train_model(ticket, train, test, cfg, |_| {})?.network;
            PruneRow {
                p,
                params_remaining: retrained.param_count().total,
                test_acc: evaluate(&retrained, test)?,
                retrain_epochs: cfg.epochs,
            }
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(PruneReport { kind, rows })
}

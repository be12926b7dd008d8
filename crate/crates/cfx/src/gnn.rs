//! Message-passing classifier: the black-box property predictor under
//! explanation.
//!
//! Three message-passing layers over featurized molecular graphs, max pooling
//! into a graph state, and an affine 2-class head. After training the model
//! is frozen and treated as an opaque oracle by the rest of the pipeline.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::chem::{featurize, ChemError, Element, FeaturizeConfig, MolFeatures, Molecule};
use crate::optim::{Adam, OptimError};
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};
use crate::Rng;

#[derive(Debug, Error)]
pub enum GnnError {
    #[error(transparent)]
    Chem(#[from] ChemError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("labels must be 0 or 1, got {0}")]
    BadLabel(u8),
}

/// How a layer folds the aggregated message into the node state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateForm {
    /// h <- relu([h, m] W + b)
    Concat,
    /// h <- h + relu(m W + b)
    Additive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnConfig {
    pub hidden: usize,
    pub layers: usize,
    pub update: UpdateForm,
    pub feat: FeaturizeConfig,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig {
            hidden: 64,
            layers: 3,
            update: UpdateForm::Concat,
            feat: FeaturizeConfig::default_set(),
        }
    }
}

// ---- shared message-passing trunk ----

#[derive(Debug, Clone)]
pub struct MpLayer {
    pub msg_w: Tensor,
    pub msg_b: Tensor,
    pub upd_w: Tensor,
    pub upd_b: Tensor,
}

/// Input embedding plus a stack of message-passing layers; used by both the
/// classifier and the generator encoder (with separate weights).
#[derive(Debug, Clone)]
pub struct MpTrunk {
    pub input_w: Tensor,
    pub input_b: Tensor,
    pub layers: Vec<MpLayer>,
    pub hidden: usize,
    pub update: UpdateForm,
}

pub struct MpTrunkVars {
    input_w: Var,
    input_b: Var,
    layers: Vec<(Var, Var, Var, Var)>,
}

impl MpTrunk {
    pub fn init(
        feat_width: usize,
        hidden: usize,
        layers: usize,
        update: UpdateForm,
        rng: &mut Rng,
    ) -> Self {
        let d = hidden;
        let msg_in = 2 * d + 3;
        let upd_in = match update {
            UpdateForm::Concat => 2 * d,
            UpdateForm::Additive => d,
        };
        MpTrunk {
            input_w: Tensor::init_uniform(feat_width, d, feat_width, rng),
            input_b: Tensor::zeros(vec![1, d]),
            layers: (0..layers)
                .map(|_| MpLayer {
                    msg_w: Tensor::init_uniform(msg_in, d, msg_in, rng),
                    msg_b: Tensor::zeros(vec![1, d]),
                    upd_w: Tensor::init_uniform(upd_in, d, upd_in, rng),
                    upd_b: Tensor::zeros(vec![1, d]),
                })
                .collect(),
            hidden: d,
            update,
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> MpTrunkVars {
        let leaf = |t: &Tensor, tape: &mut Tape| {
            if trainable {
                tape.param(t)
            } else {
                tape.constant(t)
            }
        };
        MpTrunkVars {
            input_w: leaf(&self.input_w, tape),
            input_b: leaf(&self.input_b, tape),
            layers: self
                .layers
                .iter()
                .map(|l| {
                    (
                        leaf(&l.msg_w, tape),
                        leaf(&l.msg_b, tape),
                        leaf(&l.upd_w, tape),
                        leaf(&l.upd_b, tape),
                    )
                })
                .collect(),
        }
    }

    /// Node states after all layers: [n_atoms, hidden].
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &MpTrunkVars,
        feats: &MolFeatures,
    ) -> Result<Var, TensorError> {
        let nodes = tape.constant(&feats.nodes);
        let lin = tape.matmul(nodes, vars.input_w)?;
        let lin = tape.add_bias(lin, vars.input_b)?;
        let mut h = tape.relu(lin);

        // Directed edge lists: each undirected bond contributes both
        // directions; rcv[k] receives the message along edge k.
        let mut src = Vec::with_capacity(feats.edges.len() * 2);
        let mut rcv = Vec::with_capacity(feats.edges.len() * 2);
        let mut efeat = Vec::with_capacity(feats.edges.len() * 2 * 3);
        for (k, &(a, b, _)) in feats.edges.iter().enumerate() {
            let row = &feats.edge_feats.data()[k * 3..(k + 1) * 3];
            src.push(b);
            rcv.push(a);
            efeat.extend_from_slice(row);
            src.push(a);
            rcv.push(b);
            efeat.extend_from_slice(row);
        }
        let n_atoms = feats.nodes.shape()[0];
        let e = tape.constant_matrix(src.len(), 3, efeat);

        for &(msg_w, msg_b, upd_w, upd_b) in &vars.layers {
            let h_rcv = tape.gather_rows(h, &rcv);
            let h_src = tape.gather_rows(h, &src);
            let msg_in = tape.concat_cols(&[h_rcv, h_src, e])?;
            let msg_lin = tape.matmul(msg_in, msg_w)?;
            let msg_lin = tape.add_bias(msg_lin, msg_b)?;
            let messages = tape.relu(msg_lin);
            let m = tape.scatter_add_rows(messages, &rcv, n_atoms);
            h = match self.update {
                UpdateForm::Concat => {
                    let cat = tape.concat_cols(&[h, m])?;
                    let lin = tape.matmul(cat, upd_w)?;
                    let lin = tape.add_bias(lin, upd_b)?;
                    tape.relu(lin)
                }
                UpdateForm::Additive => {
                    let lin = tape.matmul(m, upd_w)?;
                    let lin = tape.add_bias(lin, upd_b)?;
                    let act = tape.relu(lin);
                    tape.add(h, act)?
                }
            };
        }
        Ok(h)
    }

    pub fn flat(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("input_w".to_string(), &self.input_w),
            ("input_b".to_string(), &self.input_b),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.msg_w"), &l.msg_w));
            out.push((format!("layer{i}.msg_b"), &l.msg_b));
            out.push((format!("layer{i}.upd_w"), &l.upd_w));
            out.push((format!("layer{i}.upd_b"), &l.upd_b));
        }
        out
    }

    pub fn flat_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        out.push(("input_w".to_string(), &mut self.input_w));
        out.push(("input_b".to_string(), &mut self.input_b));
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{i}.msg_w"), &mut l.msg_w));
            out.push((format!("layer{i}.msg_b"), &mut l.msg_b));
            out.push((format!("layer{i}.upd_w"), &mut l.upd_w));
            out.push((format!("layer{i}.upd_b"), &mut l.upd_b));
        }
        out
    }
}

impl MpTrunkVars {
    pub fn flat(&self) -> Vec<Var> {
        let mut out = vec![self.input_w, self.input_b];
        for &(a, b, c, d) in &self.layers {
            out.extend([a, b, c, d]);
        }
        out
    }
}

// ---- classifier ----

#[derive(Debug, Clone)]
pub struct GnnModel {
    pub trunk: MpTrunk,
    pub head_w: Tensor,
    pub head_b: Tensor,
    pub cfg: GnnConfig,
}

impl GnnModel {
    pub fn init(cfg: &GnnConfig, rng: &mut Rng) -> Self {
        let trunk = MpTrunk::init(cfg.feat.node_width(), cfg.hidden, cfg.layers, cfg.update, rng);
        GnnModel {
            head_w: Tensor::init_uniform(cfg.hidden, 2, cfg.hidden, rng),
            head_b: Tensor::zeros(vec![1, 2]),
            trunk,
            cfg: cfg.clone(),
        }
    }

    /// All-zero weights; a symmetry baseline.
    pub fn zeros(cfg: &GnnConfig) -> Self {
        let mut rng = Rng::from_seed(0);
        let mut m = Self::init(cfg, &mut rng);
        for (_, t) in m.flat_mut() {
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        m
    }

    fn logits_var(
        &self,
        tape: &mut Tape,
        trunk_vars: &MpTrunkVars,
        head_w: Var,
        head_b: Var,
        feats: &MolFeatures,
    ) -> Result<Var, TensorError> {
        let h = self.trunk.forward(tape, trunk_vars, feats)?;
        let pooled = tape.col_max(h);
        let logits = tape.matmul(pooled, head_w)?;
        tape.add_bias(logits, head_b)
    }

    /// Class probabilities (p0, p1).
    pub fn forward(&self, mol: &Molecule) -> Result<[f32; 2], GnnError> {
        let feats = featurize(mol, &self.cfg.feat)?;
        let mut tape = Tape::new();
        let tv = self.trunk.bind(&mut tape, false);
        let hw = tape.constant(&self.head_w);
        let hb = tape.constant(&self.head_b);
        let logits = self.logits_var(&mut tape, &tv, hw, hb, &feats)?;
        let probs = tape.softmax(logits);
        let v = tape.value_f32(probs);
        Ok([v[0], v[1]])
    }

    /// Softmax probability of `target_class`.
    pub fn predict_prob(&self, mol: &Molecule, target_class: u8) -> Result<f32, GnnError> {
        if target_class > 1 {
            return Err(GnnError::BadLabel(target_class));
        }
        Ok(self.forward(mol)?[target_class as usize])
    }

    /// Argmax label (ties resolve to class 0).
    pub fn predict_label(&self, mol: &Molecule) -> Result<u8, GnnError> {
        let p = self.forward(mol)?;
        Ok(if p[1] > p[0] { 1 } else { 0 })
    }

    /// Negative log-likelihood of a target class at the tape's internal
    /// precision; finite-difference checks need this to avoid f32
    /// quantization noise.
    pub fn nll_precise(&self, mol: &Molecule, target_class: u8) -> Result<f64, GnnError> {
        if target_class > 1 {
            return Err(GnnError::BadLabel(target_class));
        }
        let feats = featurize(mol, &self.cfg.feat)?;
        let mut tape = Tape::new();
        let tv = self.trunk.bind(&mut tape, false);
        let hw = tape.constant(&self.head_w);
        let hb = tape.constant(&self.head_b);
        let logits = self.logits_var(&mut tape, &tv, hw, hb, &feats)?;
        let logp = tape.log_softmax(logits);
        Ok(-tape.value(logp)[target_class as usize])
    }

    pub fn flat(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self
            .trunk
            .flat()
            .into_iter()
            .map(|(n, t)| (format!("trunk.{n}"), t))
            .collect();
        out.push(("head_w".to_string(), &self.head_w));
        out.push(("head_b".to_string(), &self.head_b));
        out
    }

    pub fn flat_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = self
            .trunk
            .flat_mut()
            .into_iter()
            .map(|(n, t)| (format!("trunk.{n}"), t))
            .collect();
        out.push(("head_w".to_string(), &mut self.head_w));
        out.push(("head_b".to_string(), &mut self.head_b));
        out
    }

    pub fn save(&self, path: &std::path::Path, config_hash: u64) -> Result<(), GnnError> {
        let mut ck = Checkpoint::new();
        for (name, t) in self.flat() {
            ck.insert(&format!("gnn.{name}"), t.clone());
        }
        ck.insert_scalar("meta.hidden", self.cfg.hidden as f32);
        ck.insert_scalar("meta.layers", self.cfg.layers as f32);
        ck.insert_scalar(
            "meta.update",
            match self.cfg.update {
                UpdateForm::Concat => 0.0,
                UpdateForm::Additive => 1.0,
            },
        );
        ck.insert("meta.elements", elements_tensor(&self.cfg.feat));
        ck.insert("meta.config_hash", config_hash_tensor(config_hash));
        ck.save(path)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, GnnError> {
        let ck = Checkpoint::load(path)?;
        let hidden = ck.get_scalar("meta.hidden")? as usize;
        let layers = ck.get_scalar("meta.layers")? as usize;
        let update = if ck.get_scalar("meta.update")? == 0.0 {
            UpdateForm::Concat
        } else {
            UpdateForm::Additive
        };
        let feat = elements_from_tensor(ck.get("meta.elements")?)?;
        let cfg = GnnConfig {
            hidden,
            layers,
            update,
            feat,
        };
        let mut model = GnnModel::zeros(&cfg);
        for (name, t) in model.flat_mut() {
            *t = ck.get(&format!("gnn.{name}"))?.clone();
        }
        Ok(model)
    }
}

pub(crate) fn elements_tensor(feat: &FeaturizeConfig) -> Tensor {
    Tensor::vector(
        feat.elements
            .iter()
            .map(|&e| Element::ALL.iter().position(|&x| x == e).expect("known element") as f32)
            .collect(),
    )
}

pub(crate) fn elements_from_tensor(t: &Tensor) -> Result<FeaturizeConfig, CheckpointError> {
    let elements = t
        .data()
        .iter()
        .map(|&v| {
            Element::ALL
                .get(v as usize)
                .copied()
                .ok_or_else(|| CheckpointError::Malformed(format!("bad element code {v}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FeaturizeConfig { elements })
}

/// Config hash packed as four 16-bit halves so it survives the f32 container.
pub fn config_hash_tensor(hash: u64) -> Tensor {
    Tensor::vector(
        (0..4)
            .map(|i| ((hash >> (16 * i)) & 0xFFFF) as f32)
            .collect(),
    )
}

/// Recover a config hash embedded via [`config_hash_tensor`].
pub fn config_hash_from_tensor(t: &Tensor) -> u64 {
    t.data()
        .iter()
        .enumerate()
        .map(|(i, &v)| (v as u64) << (16 * i))
        .sum()
}

// ---- training ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f32,
    pub valid_acc: f32,
}

#[derive(Debug, Clone)]
pub struct GnnTrainConfig {
    pub lr: f32,
    pub epochs: usize,
    pub batch: usize,
}

impl Default for GnnTrainConfig {
    fn default() -> Self {
        GnnTrainConfig {
            lr: 1e-3,
            epochs: 1000,
            batch: 32,
        }
    }
}

/// Cross-entropy training with Adam; returns the parameters with the best
/// validation accuracy and the per-epoch curve.
pub fn train_classifier(
    train: &[(Molecule, u8)],
    valid: &[(Molecule, u8)],
    cfg: &GnnConfig,
    tcfg: &GnnTrainConfig,
    rng: &mut Rng,
) -> Result<(GnnModel, Vec<EpochLog>), GnnError> {
    if train.is_empty() {
        return Err(GnnError::EmptySplit("train"));
    }
    if valid.is_empty() {
        return Err(GnnError::EmptySplit("valid"));
    }
    for &(_, y) in train.iter().chain(valid) {
        if y > 1 {
            return Err(GnnError::BadLabel(y));
        }
    }
    let mut model = GnnModel::init(cfg, rng);
    let mut adam = Adam::new();
    let train_feats: Vec<MolFeatures> = train
        .iter()
        .map(|(m, _)| featurize(m, &cfg.feat))
        .collect::<Result<_, _>>()?;
    let valid_feats: Vec<MolFeatures> = valid
        .iter()
        .map(|(m, _)| featurize(m, &cfg.feat))
        .collect::<Result<_, _>>()?;

    let mut best: Option<(f32, GnnModel)> = None;
    let mut logs = Vec::with_capacity(tcfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..tcfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(tcfg.batch.max(1)) {
            let mut tape = Tape::new();
            let tv = model.trunk.bind(&mut tape, true);
            let hw = tape.param(&model.head_w);
            let hb = tape.param(&model.head_b);
            let mut nlls = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let logits = model.logits_var(&mut tape, &tv, hw, hb, &train_feats[i])?;
                let logp = tape.log_softmax(logits);
                let picked = tape.pick_per_row(logp, &[train[i].1 as usize]);
                nlls.push(tape.neg(picked));
            }
            let stacked = tape.concat_cols(&nlls)?;
            let loss = tape.mean(stacked);
            tape.backward(loss)?;
            epoch_loss += tape.value(loss)[0];
            batches += 1;

            let mut vars = tv.flat();
            vars.push(hw);
            vars.push(hb);
            for ((name, tensor), var) in model.flat_mut().into_iter().zip(vars) {
                let grad = tape.grad_f32(var).expect("bound parameter");
                adam.step(&name, tensor, &grad, tcfg.lr)?;
            }
        }

        let mut correct = 0usize;
        for (i, (_, y)) in valid.iter().enumerate() {
            let mut tape = Tape::new();
            let tv = model.trunk.bind(&mut tape, false);
            let hw = tape.constant(&model.head_w);
            let hb = tape.constant(&model.head_b);
            let logits = model.logits_var(&mut tape, &tv, hw, hb, &valid_feats[i])?;
            let v = tape.value(logits);
            let label = if v[1] > v[0] { 1u8 } else { 0u8 };
            if label == *y {
                correct += 1;
            }
        }
        let valid_acc = correct as f32 / valid.len() as f32;
        let train_loss = (epoch_loss / batches.max(1) as f64) as f32;
        logs.push(EpochLog {
            epoch,
            train_loss,
            valid_acc,
        });
        if best.as_ref().map(|(acc, _)| valid_acc >= *acc).unwrap_or(true) {
            best = Some((valid_acc, model.clone()));
        }
    }
    let (_, best_model) = best.expect("at least one epoch");
    Ok((best_model, logs))
}

/// Accuracy of a model over a labeled set.
pub fn accuracy(model: &GnnModel, data: &[(Molecule, u8)]) -> Result<f32, GnnError> {
    if data.is_empty() {
        return Err(GnnError::EmptySplit("accuracy"));
    }
    let mut correct = 0usize;
    for (m, y) in data {
        if model.predict_label(m)? == *y {
            correct += 1;
        }
    }
    Ok(correct as f32 / data.len() as f32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;
    use crate::numcheck::{finite_difference_grad, grad_rel_err};

    fn tiny_cfg() -> GnnConfig {
        GnnConfig {
            hidden: 16,
            layers: 3,
            update: UpdateForm::Concat,
            feat: FeaturizeConfig::default_set(),
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut rng = Rng::from_seed(1);
        let model = GnnModel::init(&tiny_cfg(), &mut rng);
        for smi in ["C", "CCO", "C1CC1N", "O=C=O"] {
            let p = model.forward(&parse_smiles(smi).unwrap()).unwrap();
            assert!((p[0] + p[1] - 1.0).abs() < 1e-6, "{smi}: {p:?}");
        }
    }

    #[test]
    fn zero_weights_give_half_half() {
        let model = GnnModel::zeros(&tiny_cfg());
        let p = model.forward(&parse_smiles("CCO").unwrap()).unwrap();
        assert_eq!(p, [0.5, 0.5]);
        assert_eq!(
            model
                .predict_prob(&parse_smiles("CCO").unwrap(), 1)
                .unwrap(),
            0.5
        );
    }

    #[test]
    fn permutation_invariance() {
        let mut rng = Rng::from_seed(5);
        let model = GnnModel::init(&tiny_cfg(), &mut rng);
        // Same molecule, two atom orders.
        let a = parse_smiles("NCC(=O)O").unwrap();
        let b = parse_smiles("OC(=O)CN").unwrap();
        let pa = model.forward(&a).unwrap();
        let pb = model.forward(&b).unwrap();
        assert!((pa[0] - pb[0]).abs() < 1e-5, "{pa:?} vs {pb:?}");
    }

    #[test]
    fn additive_update_runs() {
        let mut rng = Rng::from_seed(9);
        let cfg = GnnConfig {
            update: UpdateForm::Additive,
            ..tiny_cfg()
        };
        let model = GnnModel::init(&cfg, &mut rng);
        let p = model.forward(&parse_smiles("CCO").unwrap()).unwrap();
        assert!((p[0] + p[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn gradient_check_on_three_atoms() {
        let mut rng = Rng::from_seed(3);
        let cfg = GnnConfig {
            hidden: 6,
            layers: 2,
            update: UpdateForm::Concat,
            feat: FeaturizeConfig::default_set(),
        };
        let model = GnnModel::init(&cfg, &mut rng);
        let mol = parse_smiles("NCO").unwrap();
        let feats = featurize(&mol, &cfg.feat).unwrap();

        // Gradients of the first layer's message weights.
        let loss_with = |w: &[f32]| -> f64 {
            let mut m = model.clone();
            m.trunk.layers[0].msg_w =
                Tensor::new(m.trunk.layers[0].msg_w.shape().to_vec(), w.to_vec()).unwrap();
            let mut tape = Tape::new();
            let tv = m.trunk.bind(&mut tape, false);
            let hw = tape.constant(&m.head_w);
            let hb = tape.constant(&m.head_b);
            let logits = m.logits_var(&mut tape, &tv, hw, hb, &feats).unwrap();
            let logp = tape.log_softmax(logits);
            let picked = tape.pick_per_row(logp, &[1]);
            let nll = tape.neg(picked);
            let loss = tape.sum(nll);
            tape.value(loss)[0]
        };

        let analytic = {
            let mut tape = Tape::new();
            let tv = model.trunk.bind(&mut tape, true);
            let hw = tape.param(&model.head_w);
            let hb = tape.param(&model.head_b);
            let logits = model.logits_var(&mut tape, &tv, hw, hb, &feats).unwrap();
            let logp = tape.log_softmax(logits);
            let picked = tape.pick_per_row(logp, &[1]);
            let nll = tape.neg(picked);
            let loss = tape.sum(nll);
            tape.backward(loss).unwrap();
            tape.grad(tv.flat()[2]).unwrap().to_vec() // layer0.msg_w
        };
        let x = model.trunk.layers[0].msg_w.data().to_vec();
        let numeric = finite_difference_grad(loss_with, &x, 1e-3);
        let err = grad_rel_err(&analytic, &numeric);
        assert!(err < 1e-4, "rel err {err}");
    }

    /// Synthetic corpus: positive iff the molecule contains oxygen.
    fn contains_o_corpus(n: usize, rng: &mut Rng) -> Vec<(Molecule, u8)> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let len = 2 + rng.index(5);
            let mut mol = Molecule::new();
            let mut has_o = false;
            for i in 0..len {
                let el = match rng.index(4) {
                    0 => Element::N,
                    1 if i > 0 => {
                        has_o = true;
                        Element::O
                    }
                    _ => Element::C,
                };
                let a = mol.add_atom(el, 0);
                if a > 0 {
                    mol.add_bond(a - 1, a, 1).unwrap();
                }
            }
            if mol.is_valid() {
                out.push((mol, has_o as u8));
            }
        }
        out
    }

    #[test]
    fn learns_contains_oxygen_rule() {
        let mut rng = Rng::from_seed(42);
        let corpus = contains_o_corpus(200, &mut rng);
        let (train, valid) = corpus.split_at(160);
        let cfg = tiny_cfg();
        let tcfg = GnnTrainConfig {
            lr: 1e-3,
            epochs: 60,
            batch: 32,
        };
        let (model, logs) = train_classifier(train, valid, &cfg, &tcfg, &mut rng).unwrap();
        let acc = accuracy(&model, train).unwrap();
        assert!(acc >= 0.95, "train accuracy {acc}");

        // Loss non-increasing across 20-epoch moving windows.
        let avg = |span: &[EpochLog]| {
            span.iter().map(|l| l.train_loss as f64).sum::<f64>() / span.len() as f64
        };
        let first = avg(&logs[..20]);
        let last = avg(&logs[logs.len() - 20..]);
        assert!(last <= first + 1e-6, "loss did not decrease: {first} -> {last}");
    }

    #[test]
    fn checkpoint_roundtrip_reproduces_outputs() {
        let mut rng = Rng::from_seed(77);
        let model = GnnModel::init(&tiny_cfg(), &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gnn.ckpt");
        model.save(&path, 0xDEADBEEF12345678).unwrap();
        let loaded = GnnModel::load(&path).unwrap();
        for smi in ["CCO", "C1CC1", "N#CC"] {
            let m = parse_smiles(smi).unwrap();
            assert_eq!(model.forward(&m).unwrap(), loaded.forward(&m).unwrap());
        }
    }

    #[test]
    fn config_hash_packs_exactly() {
        let h = 0xDEADBEEF12345678u64;
        assert_eq!(config_hash_from_tensor(&config_hash_tensor(h)), h);
    }
}

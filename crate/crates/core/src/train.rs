//! One filtered training iteration, end to end.
//!
//! Order per step: draw a PK batch, embed it, score it, update the
//! threshold, split into clean and noisy, enqueue the clean embeddings, take
//! the loss on the clean rows only (the memory loss already sees the fresh
//! entries), backpropagate and apply one SGD step on the cosine schedule.

use alloc::boxed::Box;
use alloc::vec::Vec;

use crate::dataeval::PkSampler;
use crate::losses::{
    contrastive_batch, memory_contrastive, soft_triple, ContrastiveParams, LossOutput,
    SoftTripleParams,
};
use crate::memory_bank::MemoryBank;
use crate::model::{apply_sgd, sgd_step, EmbeddingNet, Layout, OptState};
use crate::numkit::{FeatureMatrix, SeededRng, Stream};
use crate::prism::{filter_batch, CleanProbVector, Partition, Scoring, ThresholdMode, ThresholdState};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Contrastive,
    MemoryContrastive,
    SoftTriple,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftTripleConfig {
    pub proxies_per_class: usize,
    pub scale: f64,
    pub gamma: f64,
    pub margin: f64,
    /// Proxy learning rate as a multiple of the network's.
    pub lr_mult: f64,
}

impl Default for SoftTripleConfig {
    fn default() -> Self {
        SoftTripleConfig {
            proxies_per_class: 10,
            scale: 20.0,
            gamma: 10.0,
            margin: 0.01,
            lr_mult: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub layout: Layout,
    pub loss: LossKind,
    pub contrastive_margin: f64,
    pub soft_triple: SoftTripleConfig,
    pub scoring: Scoring,
    pub threshold_mode: ThresholdMode,
    pub filter_rate: f64,
    pub window: usize,
    pub p: usize,
    pub k: usize,
    pub bank_capacity: usize,
    pub base_lr: f64,
    pub min_lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub total_iters: u64,
    pub seed: u64,
}

/// What one call to [`Trainer::step`] did.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub iteration: u64,
    /// Dataset indices of the batch, in batch order.
    pub batch: Vec<usize>,
    pub scores: CleanProbVector,
    pub threshold: f64,
    /// Positions into `batch`.
    pub partition: Partition,
    /// `None` when the step had too few clean samples to form a loss.
    pub loss: Option<f64>,
    pub lr: f64,
    pub bank_len: usize,
}

pub struct Trainer {
    config: TrainerConfig,
    net: EmbeddingNet,
    opt: OptState,
    bank: MemoryBank,
    threshold: ThresholdState,
    sampler: PkSampler,
    sampler_rng: SeededRng,
    proxies: Option<SoftTripleParams>,
    contrastive: ContrastiveParams,
    num_classes: usize,
    iteration: u64,
}

fn at<T>(iteration: u64, stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        iteration,
        stage,
        source: Box::new(e),
    })
}

impl Trainer {
    /// `labels` are the (possibly noisy) training labels the sampler draws
    /// from; `num_classes` bounds them.
    pub fn new(config: TrainerConfig, labels: &[usize], num_classes: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::OutOfRange {
                what: "training label",
                value: bad as f64,
            });
        }
        let mut init = SeededRng::for_stream(config.seed, Stream::Init);
        let net = EmbeddingNet::new(config.layout, &mut init)?;
        let proxies = match config.loss {
            LossKind::SoftTriple => {
                let st = config.soft_triple;
                let mut prng = SeededRng::for_stream(config.seed, Stream::Custom(1));
                Some(SoftTripleParams::new(
                    num_classes,
                    st.proxies_per_class,
                    config.layout.output_dim,
                    st.scale,
                    st.gamma,
                    st.margin,
                    &mut prng,
                )?)
            }
            _ => None,
        };
        let opt = OptState::new(config.base_lr, config.min_lr, config.total_iters, config.weight_decay)?
            .with_momentum(config.momentum);
        Ok(Trainer {
            net,
            opt,
            bank: MemoryBank::new(config.bank_capacity, config.layout.output_dim)?,
            threshold: ThresholdState::new(config.threshold_mode, config.filter_rate, config.window)?,
            sampler: PkSampler::new(labels, config.p, config.k)?,
            sampler_rng: SeededRng::for_stream(config.seed, Stream::Sampler),
            proxies,
            contrastive: ContrastiveParams::new(config.contrastive_margin)?,
            num_classes,
            iteration: 0,
            config,
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn net(&self) -> &EmbeddingNet {
        &self.net
    }

    pub fn bank(&self) -> &MemoryBank {
        &self.bank
    }

    pub fn threshold_state(&self) -> &ThresholdState {
        &self.threshold
    }

    pub fn proxies(&self) -> Option<&SoftTripleParams> {
        self.proxies.as_ref()
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Runs one iteration on `features` (all training rows) with the
    /// sampler's labels.
    pub fn step(&mut self, features: &FeatureMatrix, labels: &[usize]) -> Result<StepReport> {
        let it = self.iteration;
        let batch = self.sampler.sample(&mut self.sampler_rng);
        let x = features.select_rows(&batch);
        let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();

        let (emb, cache) = at(it, "forward", self.net.forward(&x))?;
        let scores = at(
            it,
            "scoring",
            self.config.scoring.score(&self.bank, &emb, &y, self.num_classes),
        )?;
        at(it, "threshold", self.threshold.update(&scores.ranked_scores()))?;
        let m = self.threshold.threshold();
        let partition = filter_batch(&scores, m);

        let clean_emb = emb.select_rows(&partition.clean);
        let clean_y: Vec<usize> = partition.clean.iter().map(|&i| y[i]).collect();
        at(
            it,
            "enqueue",
            self.bank
                .enqueue_clean(clean_emb.iter_rows().zip(clean_y.iter().copied()))
                .map(drop),
        )?;

        let lr = at(it, "schedule", self.opt.cosine_lr())?;
        let out = at(it, "loss", self.loss(&clean_emb, &clean_y))?;
        let loss = match out {
            Some(out) => {
                let mut d_out = FeatureMatrix::zeros(emb.rows(), emb.cols());
                for (r, &i) in partition.clean.iter().enumerate() {
                    d_out.row_mut(i).copy_from_slice(out.d_embeddings.row(r));
                }
                let grads = at(it, "backward", self.net.backward(&cache, &d_out))?;
                at(it, "update", sgd_step(&mut self.net, &grads, &mut self.opt))?;
                if let (Some(p), Some(g)) = (self.proxies.as_mut(), out.d_proxies.as_ref()) {
                    if g.iter().any(|v| !v.is_finite()) {
                        return at(
                            it,
                            "update",
                            Err(Error::NonFinite {
                                what: "proxy gradient".into(),
                            }),
                        );
                    }
                    apply_sgd(&mut p.proxies, g, lr * self.config.soft_triple.lr_mult, 0.0);
                }
                Some(out.value)
            }
            None => {
                self.opt.advance();
                None
            }
        };
        self.iteration += 1;
        Ok(StepReport {
            iteration: it,
            batch,
            scores,
            threshold: m,
            partition,
            loss,
            lr,
            bank_len: self.bank.len(),
        })
    }

    fn loss(&self, emb: &FeatureMatrix, labels: &[usize]) -> Result<Option<LossOutput>> {
        if labels.is_empty() {
            return Ok(None);
        }
        match self.config.loss {
            LossKind::Contrastive if labels.len() < 2 => Ok(None),
            LossKind::Contrastive => contrastive_batch(emb, labels, &self.contrastive).map(Some),
            LossKind::MemoryContrastive => {
                memory_contrastive(&self.bank, emb, labels, &self.contrastive).map(Some)
            }
            LossKind::SoftTriple => {
                let p = self.proxies.as_ref().expect("proxies exist for soft triple");
                soft_triple(emb, labels, p).map(Some)
            }
        }
    }

    /// Embeds every row of `x` with the current network.
    pub fn embed(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        self.net.embed(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataeval::{generate_synthetic, precision_at_1, SyntheticSpec};

    fn config(loss: LossKind, scoring: Scoring, rate: f64) -> TrainerConfig {
        TrainerConfig {
            layout: Layout::linear(8, 4),
            loss,
            contrastive_margin: 0.5,
            soft_triple: SoftTripleConfig {
                proxies_per_class: 2,
                ..SoftTripleConfig::default()
            },
            scoring,
            threshold_mode: ThresholdMode::Strm,
            filter_rate: rate,
            window: 3,
            p: 3,
            k: 4,
            bank_capacity: 40,
            base_lr: 0.01,
            min_lr: 0.0,
            weight_decay: 1e-4,
            momentum: 0.0,
            total_iters: 30,
            seed: 5,
        }
    }

    fn data() -> crate::dataeval::Dataset {
        generate_synthetic(&SyntheticSpec::new(6, 10, 8, 3.0, 1.0, 0)).unwrap()
    }

    #[test]
    fn zero_rate_matches_filter_off_bitwise() {
        let d = data();
        for loss in [LossKind::Contrastive, LossKind::MemoryContrastive, LossKind::SoftTriple] {
            let mut off = Trainer::new(config(loss, Scoring::Off, 0.0), &d.labels, 6).unwrap();
            let mut full = Trainer::new(config(loss, Scoring::Full, 0.0), &d.labels, 6).unwrap();
            for _ in 0..30 {
                let a = off.step(&d.features, &d.labels).unwrap();
                let b = full.step(&d.features, &d.labels).unwrap();
                assert_eq!(a.partition, b.partition);
                assert_eq!(a.loss.map(f64::to_bits), b.loss.map(f64::to_bits));
            }
            assert_eq!(off.net(), full.net());
            assert_eq!(off.proxies(), full.proxies());
        }
    }

    #[test]
    fn centers_and_full_partitions_agree() {
        let d = data();
        let mut a = Trainer::new(config(LossKind::MemoryContrastive, Scoring::Full, 0.3), &d.labels, 6).unwrap();
        let mut b = Trainer::new(config(LossKind::MemoryContrastive, Scoring::Centers, 0.3), &d.labels, 6).unwrap();
        for _ in 0..30 {
            let ra = a.step(&d.features, &d.labels).unwrap();
            let rb = b.step(&d.features, &d.labels).unwrap();
            assert_eq!(ra.partition, rb.partition);
            for (x, y) in ra.scores.p.iter().zip(&rb.scores.p) {
                assert!((x - y).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn first_step_keeps_everything_and_bank_fills_monotonically() {
        let d = data();
        let mut t = Trainer::new(config(LossKind::MemoryContrastive, Scoring::Centers, 0.5), &d.labels, 6).unwrap();
        let first = t.step(&d.features, &d.labels).unwrap();
        assert!(first.partition.noisy.is_empty());
        assert!(first.scores.presumed_clean.iter().all(|c| *c));
        let mut last = first.bank_len;
        for _ in 0..20 {
            let r = t.step(&d.features, &d.labels).unwrap();
            assert!(r.bank_len >= last);
            assert!(r.bank_len <= 40);
            last = r.bank_len;
        }
        assert_eq!(last, 40);
    }

    #[test]
    fn deterministic_per_seed() {
        let d = data();
        let run = || {
            let mut t = Trainer::new(config(LossKind::SoftTriple, Scoring::Centers, 0.25), &d.labels, 6).unwrap();
            (0..10)
                .map(|_| t.step(&d.features, &d.labels).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn training_improves_retrieval() {
        let mut spec = SyntheticSpec::new(8, 20, 12, 1.0, 0.3, 2);
        spec.nuisance_dims = 6;
        spec.nuisance_std = 2.0;
        let d = generate_synthetic(&spec).unwrap();
        let mut cfg = config(LossKind::SoftTriple, Scoring::Off, 0.0);
        cfg.layout = Layout::linear(12, 4);
        cfg.total_iters = 300;
        cfg.base_lr = 0.05;
        cfg.k = 8;
        let mut t = Trainer::new(cfg, &d.labels, 8).unwrap();
        let before = precision_at_1(&t.embed(&d.features).unwrap(), &d.labels).unwrap();
        for _ in 0..300 {
            t.step(&d.features, &d.labels).unwrap();
        }
        let after = precision_at_1(&t.embed(&d.features).unwrap(), &d.labels).unwrap();
        assert!(after > before + 0.1, "{before} -> {after}");
    }

    #[test]
    fn errors_carry_iteration_and_stage() {
        let d = data();
        let mut t = Trainer::new(config(LossKind::Contrastive, Scoring::Off, 0.0), &d.labels, 6).unwrap();
        let mut bad = d.features.clone();
        bad.as_mut_slice().iter_mut().for_each(|v| *v = f64::NAN);
        match t.step(&bad, &d.labels) {
            Err(Error::Stage { iteration: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}

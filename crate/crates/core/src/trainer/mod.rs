//! Training loop, checkpoints, metrics and sweeps.

pub mod checkpoint;
pub mod dataset;
pub mod metrics;
pub mod optim;
pub mod sweep;

use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub use checkpoint::Checkpoint;
pub use dataset::{Dataset, DatasetKind, DatasetSpec};
pub use metrics::{energy_distance, write_metrics_csv, MetricsContext, RunMetrics};
pub use optim::{Ema, Optimizer, OptimizerConfig, OptimizerKind};
pub use sweep::{run_sweep, write_sweep_csv, SweepCell, SweepRow};

use crate::error::{Error, Result};
use crate::haar::{dwt2, FreqState, Pixels};
use crate::objective::{fa_loss, fa_loss_grad, LossBreakdown};
use crate::predictor::{Activation, FactorizedModel, ModelConfig};
use crate::schedules::{FreqWeights, HeteroSchedule, TimeSampler};
use crate::transport::{interpolate_bands, velocity_gains, DEFAULT_T_MAX};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dataset: DatasetSpec,
    pub gamma_low: f64,
    pub gamma_high: f64,
    pub eps_smooth: f64,
    pub omega: f64,
    pub optimizer: OptimizerConfig,
    pub lr_schedule: LrSchedule,
    pub batch_size: usize,
    pub steps: usize,
    pub cond_dropout: f64,
    pub seed: u64,
    pub ema: bool,
    pub ema_decay: f64,
    pub time_sampler: TimeSampler,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub stop_gradient: bool,
    pub t_max: f64,
}

impl TrainConfig {
    pub fn new(dataset: DatasetSpec) -> Self {
        Self {
            dataset,
            gamma_low: 0.95,
            gamma_high: 1.05,
            eps_smooth: crate::schedules::DEFAULT_EPS_SMOOTH,
            omega: 0.7,
            optimizer: OptimizerConfig::default(),
            lr_schedule: LrSchedule::Constant,
            batch_size: 256,
            steps: 1000,
            cond_dropout: 0.1,
            seed: 0,
            ema: false,
            ema_decay: 0.9999,
            time_sampler: TimeSampler::default(),
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            stop_gradient: true,
            t_max: DEFAULT_T_MAX,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.schedule()?;
        self.weights()?;
        TimeSampler::new(self.time_sampler.mu, self.time_sampler.sigma)?;
        if !(self.optimizer.lr > 0.0 && self.optimizer.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.optimizer.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.cond_dropout) {
            return Err(Error::Config(format!(
                "cond_dropout must lie in [0, 1), got {}",
                self.cond_dropout
            )));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(Error::Config(format!(
                "ema_decay must lie in (0, 1), got {}",
                self.ema_decay
            )));
        }
        if !(0.0..1.0).contains(&self.optimizer.beta1) || !(0.0..1.0).contains(&self.optimizer.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.optimizer.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if !(self.t_max > 0.0 && self.t_max < 1.0) {
            return Err(Error::Config(format!("t_max must lie in (0, 1), got {}", self.t_max)));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<HeteroSchedule> {
        HeteroSchedule::new(self.gamma_low, self.gamma_high, self.eps_smooth)
    }

    pub fn weights(&self) -> Result<FreqWeights> {
        FreqWeights::new(self.omega)
    }

    pub fn metrics_context(&self) -> MetricsContext {
        MetricsContext {
            lr: self.optimizer.lr,
            lr_schedule: self.lr_schedule,
            total_steps: self.steps,
            omega: self.omega,
            gamma_low: self.gamma_low,
            gamma_high: self.gamma_high,
            seed: self.seed,
        }
    }

    /// SHA-256 of the full configuration, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(format!("{self:?}").as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Learning rate as a function of training progress.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from the base rate down to zero at the last step.
    Cosine,
}

impl LrSchedule {
    pub fn name(self) -> &'static str {
        match self {
            LrSchedule::Constant => "constant",
            LrSchedule::Cosine => "cosine",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "constant" => Some(LrSchedule::Constant),
            "cosine" => Some(LrSchedule::Cosine),
            _ => None,
        }
    }

    /// Rate for 0-based `step` out of `total`.
    pub fn lr(self, base: f64, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine if total == 0 => base,
            LrSchedule::Cosine => 0.5 * base * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos()),
        }
    }
}

/// One training batch: data, labels, times and noise, aligned by index.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub data: Vec<Pixels>,
    pub conds: Vec<Option<usize>>,
    pub ts: Vec<f64>,
    pub noise: Vec<Pixels>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Path and loss settings shared by every step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSetup {
    pub schedule: HeteroSchedule,
    pub weights: FreqWeights,
    pub t_max: f64,
}

/// Stages of one training step, in the order they run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Dwt,
    Interpolate,
    Predict,
    Convert,
    Loss,
    Backward,
    Update,
}

pub trait StageObserver {
    fn on_stage(&mut self, stage: Stage);
}

/// Extra loss on the clean-sample prediction. Returns the value and its
/// gradient with respect to the predicted bands.
pub trait AuxiliaryLoss: Send + Sync {
    fn name(&self) -> &str;
    fn evaluate(&self, x_hat: &FreqState, data: &FreqState) -> Result<(f64, FreqState)>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Batch mean of the band-weighted velocity loss.
    pub loss: LossBreakdown,
    /// Batch mean of all auxiliary losses.
    pub auxiliary: f64,
    /// Conditional velocities regressed against, in band coordinates.
    pub targets: Vec<FreqState>,
}

/// Value and parameter gradient of the batch loss without updating anything.
pub fn loss_and_grad(
    model: &FactorizedModel,
    batch: &Batch,
    setup: &StepSetup,
    mut observer: Option<&mut (dyn StageObserver + '_)>,
    aux: &[Box<dyn AuxiliaryLoss>],
) -> Result<(StepOutcome, Vec<f64>)> {
    let mut notify = |s: Stage| {
        if let Some(o) = observer.as_deref_mut() {
            o.on_stage(s);
        }
    };
    let b = batch.len();
    if b == 0 {
        return Err(Error::EmptyBatch);
    }
    if batch.conds.len() != b || batch.ts.len() != b || batch.noise.len() != b {
        return Err(Error::Dimension("batch components differ in length".into()));
    }
    let shape = model.config().shape;
    for (x, e) in batch.data.iter().zip(&batch.noise) {
        if x.shape() != shape || e.shape() != shape {
            return Err(Error::Dimension(format!("batch images must have shape {shape}")));
        }
    }

    notify(Stage::Dwt);
    let data: Vec<FreqState> = batch.data.iter().map(dwt2).collect();
    let noise: Vec<FreqState> = batch.noise.iter().map(dwt2).collect();

    notify(Stage::Interpolate);
    let mut states = Vec::with_capacity(b);
    let mut targets = Vec::with_capacity(b);
    for i in 0..b {
        let s = interpolate_bands(&data[i], &noise[i], batch.ts[i], &setup.schedule)?;
        states.push(s.state);
        targets.push(s.target_velocity);
    }

    notify(Stage::Predict);
    let pass = model.forward_batch(&states, &batch.ts, &batch.conds, None)?;
    let x_hat: Vec<FreqState> = (0..b).map(|i| model.unpack(&pass, i)).collect::<Result<_>>()?;

    notify(Stage::Convert);
    let mut gains = Vec::with_capacity(b);
    let mut v_pred = Vec::with_capacity(b);
    for i in 0..b {
        let (kl, kh) = velocity_gains(batch.ts[i].min(setup.t_max), &setup.schedule, setup.t_max)?;
        gains.push((kl, kh));
        v_pred.push(x_hat[i].lincomb((kl, kh), &states[i], (-kl, -kh))?);
    }

    notify(Stage::Loss);
    let (n_low, n_high) = (shape.low_len(), shape.high_len());
    let mut per_sample = Vec::with_capacity(b);
    let mut grad_l = Array2::zeros((b, n_low));
    let mut grad_h = Array2::zeros((b, n_high));
    let mut aux_total = 0.0;
    let mut bad = Vec::new();
    for i in 0..b {
        let l = fa_loss(&v_pred[i], &targets[i], batch.ts[i], &setup.weights)?;
        let gv = fa_loss_grad(&v_pred[i], &targets[i], batch.ts[i], &setup.weights)?;
        let (kl, kh) = gains[i];
        let mut gx = gv.scale_bands(kl / b as f64, kh / b as f64);
        let mut aux_i = 0.0;
        for a in aux {
            let (value, g) = a.evaluate(&x_hat[i], &data[i])?;
            aux_i += value;
            gx = gx.lincomb((1.0, 1.0), &g, (1.0 / b as f64, 1.0 / b as f64))?;
        }
        if !l.is_finite() || !aux_i.is_finite() || gx.to_vec().iter().any(|v| !v.is_finite()) {
            bad.push(i);
        }
        aux_total += aux_i;
        per_sample.push(l);
        for (k, &v) in gx.low_slice().iter().enumerate() {
            grad_l[[i, k]] = v;
        }
        for (k, &v) in gx.high_slice().iter().enumerate() {
            grad_h[[i, k]] = v;
        }
    }
    if !bad.is_empty() {
        return Err(Error::NonFinite { indices: bad });
    }

    notify(Stage::Backward);
    let grads = model.backward(&pass, grad_l.view(), grad_h.view())?.flatten();
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            indices: (0..b).collect(),
        });
    }
    let outcome = StepOutcome {
        loss: LossBreakdown::mean(&per_sample),
        auxiliary: aux_total / b as f64,
        targets,
    };
    Ok((outcome, grads))
}

/// One optimisation step on a fixed batch.
pub fn train_step(
    model: &mut FactorizedModel,
    optimizer: &mut Optimizer,
    batch: &Batch,
    setup: &StepSetup,
    mut observer: Option<&mut (dyn StageObserver + '_)>,
    aux: &[Box<dyn AuxiliaryLoss>],
) -> Result<StepOutcome> {
    let (outcome, grads) = loss_and_grad(model, batch, setup, observer.as_deref_mut(), aux)?;
    if let Some(o) = observer {
        o.on_stage(Stage::Update);
    }
    let mut params = model.params_flat();
    optimizer.update(&mut params, &grads)?;
    model.set_params_flat(&params)?;
    Ok(outcome)
}

/// Stateful training loop with independent random streams for data, times,
/// noise and condition dropout.
pub struct Trainer {
    config: TrainConfig,
    dataset: Dataset,
    setup: StepSetup,
    model: FactorizedModel,
    optimizer: Optimizer,
    ema: Option<Ema>,
    aux: Vec<Box<dyn AuxiliaryLoss>>,
    data_rng: ChaCha8Rng,
    time_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    drop_rng: ChaCha8Rng,
    steps_done: usize,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let dataset = config.dataset.build()?;
        let mut mc = ModelConfig::new(config.dataset.shape);
        mc.hidden = config.hidden.clone();
        mc.num_classes = dataset.num_classes();
        mc.activation = config.activation;
        mc.stop_gradient = config.stop_gradient;
        let model = FactorizedModel::init(mc, &mut stream(config.seed, 0))?;
        let optimizer = Optimizer::new(config.optimizer, model.num_params());
        let ema = config.ema.then(|| Ema::new(config.ema_decay, &model.params_flat()));
        let setup = StepSetup {
            schedule: config.schedule()?,
            weights: config.weights()?,
            t_max: config.t_max,
        };
        Ok(Self {
            dataset,
            setup,
            model,
            optimizer,
            ema,
            aux: Vec::new(),
            data_rng: stream(config.seed, 1),
            time_rng: stream(config.seed, 2),
            noise_rng: stream(config.seed, 3),
            drop_rng: stream(config.seed, 4),
            steps_done: 0,
            config,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn setup(&self) -> &StepSetup {
        &self.setup
    }

    pub fn model(&self) -> &FactorizedModel {
        &self.model
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    pub fn add_auxiliary(&mut self, loss: Box<dyn AuxiliaryLoss>) {
        self.aux.push(loss);
    }

    /// The averaged model when EMA is on, otherwise the raw one.
    pub fn sampling_model(&self) -> Result<FactorizedModel> {
        let mut m = self.model.clone();
        if let Some(e) = &self.ema {
            m.set_params_flat(&e.shadow)?;
        }
        Ok(m)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            ema_params: self.ema.as_ref().map(|e| e.shadow.clone()),
            schedule: self.setup.schedule,
            omega: self.config.omega,
            t_max: self.config.t_max,
            steps: self.steps_done,
            config_hash: self.config.hash(),
        }
    }

    pub fn draw_batch(&mut self) -> Batch {
        let b = self.config.batch_size;
        let shape = self.config.dataset.shape;
        let mut batch = Batch {
            data: Vec::with_capacity(b),
            conds: Vec::with_capacity(b),
            ts: Vec::with_capacity(b),
            noise: Vec::with_capacity(b),
        };
        for _ in 0..b {
            let (x, atom) = self.dataset.draw(&mut self.data_rng);
            let drop = self.drop_rng.random::<f64>() < self.config.cond_dropout;
            batch.data.push(x);
            batch.conds.push(if drop { None } else { self.dataset.label_of(atom) });
            batch.ts.push(self.config.time_sampler.sample(&mut self.time_rng));
            batch.noise.push(Pixels::gaussian(shape, 1.0, &mut self.noise_rng));
        }
        batch
    }

    pub fn step(&mut self) -> Result<StepOutcome> {
        self.step_observed(None)
    }

    pub fn step_observed(&mut self, observer: Option<&mut (dyn StageObserver + '_)>) -> Result<StepOutcome> {
        let batch = self.draw_batch();
        let c = &self.config;
        self.optimizer
            .set_lr(c.lr_schedule.lr(c.optimizer.lr, self.steps_done, c.steps));
        let out = train_step(
            &mut self.model,
            &mut self.optimizer,
            &batch,
            &self.setup,
            observer,
            &self.aux,
        )?;
        if let Some(e) = &mut self.ema {
            e.update(&self.model.params_flat());
        }
        self.steps_done += 1;
        Ok(out)
    }
}

/// Runs the configured number of steps in memory.
pub fn fit(config: &TrainConfig) -> Result<(Trainer, RunMetrics)> {
    let start = Instant::now();
    let mut trainer = Trainer::new(config.clone())?;
    let mut losses = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        losses.push(trainer.step()?.loss);
    }
    let metrics = RunMetrics {
        losses,
        energy_distance: None,
        wall_time_secs: start.elapsed().as_secs_f64(),
        config_hash: config.hash(),
    };
    Ok((trainer, metrics))
}

/// [`fit`], then writes the checkpoint, `metrics.csv` and `run.json` into `dir`.
pub fn fit_to_dir(config: &TrainConfig, dir: &Path) -> Result<(Trainer, RunMetrics)> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (trainer, metrics) = fit(config)?;
    trainer.checkpoint().save(dir)?;
    let path = dir.join("metrics.csv");
    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_metrics_csv(
        std::io::BufWriter::new(file),
        &metrics.losses,
        &config.metrics_context(),
    )?;
    let run = serde_json::json!({
        "config_hash": metrics.config_hash,
        "steps": metrics.losses.len(),
        "wall_time_secs": metrics.wall_time_secs,
    });
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(&run).unwrap_or_default() + "\n")
        .map_err(|e| Error::io(&path, e))?;
    Ok((trainer, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::haar::ImageShape;

    fn tiny(kind: DatasetKind) -> TrainConfig {
        let mut c = TrainConfig::new(DatasetSpec::new(kind, ImageShape::new(1, 2, 2).unwrap()));
        c.hidden = vec![16];
        c.batch_size = 8;
        c.steps = 3;
        c
    }

    struct Spy(Vec<Stage>);

    impl StageObserver for Spy {
        fn on_stage(&mut self, stage: Stage) {
            self.0.push(stage);
        }
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let c = LrSchedule::Cosine;
        assert_eq!(c.lr(0.1, 0, 10), 0.1);
        assert!((c.lr(0.1, 5, 10) - 0.05).abs() < 1e-15);
        assert!(c.lr(0.1, 9, 10) > 0.0);
        assert_eq!(LrSchedule::Constant.lr(0.1, 9, 10), 0.1);
        assert_eq!(LrSchedule::parse("cosine"), Some(c));
    }

    #[test]
    fn stage_order() {
        let mut tr = Trainer::new(tiny(DatasetKind::PointMixture)).unwrap();
        let mut spy = Spy(Vec::new());
        tr.step_observed(Some(&mut spy)).unwrap();
        use Stage::*;
        assert_eq!(spy.0, vec![Dwt, Interpolate, Predict, Convert, Loss, Backward, Update]);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut tr = Trainer::new(tiny(DatasetKind::SinglePoint)).unwrap();
        let batch = tr.draw_batch();
        let mut model = tr.model().clone();
        let before = model.params_flat();
        let mut opt = Optimizer::new(
            OptimizerConfig {
                lr: 0.0,
                ..Default::default()
            },
            model.num_params(),
        );
        let out = train_step(&mut model, &mut opt, &batch, tr.setup(), None, &[]).unwrap();
        assert_eq!(model.params_flat(), before);
        assert!(out.loss.total > 0.0);
    }

    #[test]
    fn omega_changes_weights_not_targets() {
        let mut a = tiny(DatasetKind::PointMixture);
        a.omega = 0.0;
        let mut b = a.clone();
        b.omega = 0.7;
        let mut ta = Trainer::new(a).unwrap();
        let mut tb = Trainer::new(b).unwrap();
        let (ba, bb) = (ta.draw_batch(), tb.draw_batch());
        assert_eq!(ba, bb);
        let oa = train_step(
            &mut ta.model.clone(),
            &mut ta.optimizer.clone(),
            &ba,
            &ta.setup,
            None,
            &[],
        )
        .unwrap();
        let ob = train_step(
            &mut tb.model.clone(),
            &mut tb.optimizer.clone(),
            &bb,
            &tb.setup,
            None,
            &[],
        )
        .unwrap();
        assert_eq!(oa.targets, ob.targets);
        assert_ne!(oa.loss, ob.loss);
    }

    #[test]
    fn non_finite_loss_names_the_batch_rows() {
        let tr = Trainer::new(tiny(DatasetKind::SinglePoint)).unwrap();
        let mut model = tr.model().clone();
        let mut p = model.params_flat();
        let last = p.len() - 1;
        p[last] = f64::INFINITY;
        model.set_params_flat(&p).unwrap();
        let mut tr2 = Trainer::new(tiny(DatasetKind::SinglePoint)).unwrap();
        let batch = tr2.draw_batch();
        let mut opt = Optimizer::new(OptimizerConfig::default(), model.num_params());
        let err = train_step(&mut model, &mut opt, &batch, tr.setup(), None, &[]).unwrap_err();
        match err {
            Error::NonFinite { indices } => assert_eq!(indices, (0..8).collect::<Vec<_>>()),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn zero_steps_returns_initial_model() {
        let mut c = tiny(DatasetKind::SinglePoint);
        c.steps = 0;
        let (tr, m) = fit(&c).unwrap();
        assert!(m.losses.is_empty());
        assert_eq!(tr.model(), Trainer::new(c).unwrap().model());
    }

    #[test]
    fn fit_is_deterministic() {
        let c = tiny(DatasetKind::CheckerTexture);
        let mut c = c;
        c.dataset.shape = ImageShape::new(1, 4, 4).unwrap();
        c.dataset.labels = true;
        c.ema = true;
        let (a, ma) = fit(&c).unwrap();
        let (b, mb) = fit(&c).unwrap();
        assert_eq!(a.model(), b.model());
        assert_eq!(ma.losses, mb.losses);
        assert_eq!(a.sampling_model().unwrap(), b.sampling_model().unwrap());
    }

    #[test]
    fn hash_tracks_config() {
        let a = tiny(DatasetKind::SinglePoint);
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn validation() {
        let mut c = tiny(DatasetKind::SinglePoint);
        c.omega = 1.0;
        assert!(matches!(Trainer::new(c), Err(Error::Config(_))));
        let mut c = tiny(DatasetKind::SinglePoint);
        c.optimizer.lr = 0.0;
        assert!(c.validate().is_err());
        let mut c = tiny(DatasetKind::SinglePoint);
        c.batch_size = 0;
        assert!(c.validate().is_err());
    }
}

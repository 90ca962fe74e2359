//! Conditional latent diffusion: noise schedule, forward noising, denoiser
//! training with condition dropout, deterministic DDIM sampling, and the
//! per-step clean-latent estimate that the probing classifier inspects.

use std::io::Write;
use std::path::Path;

use base64::Engine;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::classify::Prediction;
use crate::corpus::{instrument_name, NUM_CLASSES};
use crate::error::Error;
use crate::latent::{Latent, LATENT_DIM};
use crate::nn::{adam_step, mse, AdamConfig, AdamState};
use crate::nn::{Activation, Gradients, NetSpec, ParamStore, Tensor};
use crate::rng;
use crate::Result;

/// Training timesteps.
pub const T_TRAIN: usize = 200;
/// Deterministic sampling steps; index 49 is fully noisy, index 0 final.
pub const SAMPLE_STEPS: usize = 50;
pub const TIME_EMBED_DIM: usize = 32;
pub const COND_EMBED_DIM: usize = 16;
/// Denoiser input: latent ⊕ timestep embedding ⊕ condition embedding.
pub const DENOISER_INPUT: usize = LATENT_DIM + TIME_EMBED_DIM + COND_EMBED_DIM;

const BETA_START: f64 = 1e-4;
const BETA_END: f64 = 0.04;
const COND_EMBED_NAME: &str = "denoiser.cond_embed";

/// Per-step retention factors and the sampling-step list.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    pub betas: Vec<f32>,
    pub alphas: Vec<f32>,
    pub alpha_bars: Vec<f32>,
    /// Train timestep visited at each sampling index (ascending).
    pub sampling_steps: Vec<usize>,
}

impl NoiseSchedule {
    /// The production schedule: 200 linear betas with cumulative signal
    /// retention falling from ~1 to under 0.05, sampled at 50 uniformly
    /// spaced timesteps.
    pub fn toy_default() -> Self {
        let betas: Vec<f32> = (0..T_TRAIN)
            .map(|t| (BETA_START + (BETA_END - BETA_START) * t as f64 / (T_TRAIN - 1) as f64) as f32)
            .collect();
        let mut schedule = NoiseSchedule::from_betas(betas);
        schedule.sampling_steps = (0..SAMPLE_STEPS).map(|i| i * (T_TRAIN / SAMPLE_STEPS)).collect();
        schedule.validate().expect("default schedule must satisfy its invariants");
        schedule
    }

    /// Build from explicit betas; sampling list covers every timestep.
    pub fn from_betas(betas: Vec<f32>) -> Self {
        let alphas: Vec<f32> = betas.iter().map(|&b| 1.0 - b).collect();
        let mut bars = Vec::with_capacity(alphas.len());
        let mut prod = 1.0f64;
        for &a in &alphas {
            prod *= a as f64;
            bars.push(prod as f32);
        }
        let sampling_steps = (0..betas.len()).collect();
        NoiseSchedule { betas, alphas, alpha_bars: bars, sampling_steps }
    }

    /// Build directly from cumulative retention values (diagnostics/tests).
    pub fn from_alpha_bars(alpha_bars: Vec<f32>) -> Self {
        let mut alphas = Vec::with_capacity(alpha_bars.len());
        let mut prev = 1.0f32;
        for &ab in &alpha_bars {
            alphas.push(if prev > 0.0 { ab / prev } else { 0.0 });
            prev = ab;
        }
        let betas = alphas.iter().map(|&a| 1.0 - a).collect();
        let sampling_steps = (0..alpha_bars.len()).collect();
        NoiseSchedule { betas, alphas, alpha_bars, sampling_steps }
    }

    pub fn t_train(&self) -> usize {
        self.betas.len()
    }

    pub fn num_sampling_steps(&self) -> usize {
        self.sampling_steps.len()
    }

    /// Train timestep of sampling index `i`.
    pub fn train_t(&self, step_index: usize) -> usize {
        self.sampling_steps[step_index]
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f32> {
        self.alpha_bars
            .get(t)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("timestep {t} outside 0..{}", self.t_train())))
    }

    pub fn validate(&self) -> Result<()> {
        for w in self.alpha_bars.windows(2) {
            if w[1] >= w[0] {
                return Err(Error::InvalidInput("cumulative retention must strictly decrease".into()));
            }
        }
        if self.alpha_bars[0] <= 0.99 {
            return Err(Error::InvalidInput("schedule keeps too little signal at t = 0".into()));
        }
        if *self.alpha_bars.last().unwrap() >= 0.05 {
            return Err(Error::InvalidInput("schedule keeps too much signal at the last step".into()));
        }
        Ok(())
    }
}

/// Generation condition: an instrument class or the unconditional branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    Instrument(usize),
    Null,
}

impl Condition {
    pub fn validate(&self) -> Result<()> {
        if let Condition::Instrument(id) = self {
            if *id >= NUM_CLASSES {
                return Err(Error::InvalidInput(format!("instrument id {id} out of range")));
            }
        }
        Ok(())
    }

    fn embed_row(&self) -> usize {
        match self {
            Condition::Instrument(id) => *id,
            Condition::Null => NUM_CLASSES,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Condition::Instrument(id) => instrument_name(*id).to_string(),
            Condition::Null => "null".to_string(),
        }
    }
}

/// Sinusoidal timestep embedding on a geometric frequency ladder.
pub fn time_embedding(train_t: usize) -> [f32; TIME_EMBED_DIM] {
    let mut emb = [0.0f32; TIME_EMBED_DIM];
    let half = TIME_EMBED_DIM / 2;
    for i in 0..half {
        let freq = 10000f64.powf(-(i as f64) / (half as f64 - 1.0));
        let ang = train_t as f64 * freq;
        emb[2 * i] = ang.sin() as f32;
        emb[2 * i + 1] = ang.cos() as f32;
    }
    emb
}

/// The noise-prediction MLP plus its condition embedding table.
#[derive(Debug, Clone)]
pub struct DenoiserNet {
    pub spec: NetSpec,
    pub params: ParamStore,
}

fn denoiser_spec() -> NetSpec {
    NetSpec::dense(
        "denoiser",
        &[DENOISER_INPUT, 256, 256, LATENT_DIM],
        &[Activation::SmoothGate, Activation::SmoothGate, Activation::Linear],
    )
}

impl DenoiserNet {
    pub fn new(seed: u64) -> Self {
        let spec = denoiser_spec();
        let mut params = ParamStore::new();
        spec.init_params(&mut params, seed);
        // zero-init so unused condition rows stay exactly identical
        params.insert(
            COND_EMBED_NAME,
            Tensor::zeros(vec![NUM_CLASSES + 1, COND_EMBED_DIM]),
        );
        DenoiserNet { spec, params }
    }

    pub fn from_params(params: ParamStore) -> Self {
        DenoiserNet { spec: denoiser_spec(), params }
    }

    fn assemble_input(&self, x_t: &Latent, train_t: usize, cond: Condition) -> Result<Vec<f32>> {
        let table = self.params.get(COND_EMBED_NAME)?;
        let row = cond.embed_row();
        let emb = &table.data[row * COND_EMBED_DIM..(row + 1) * COND_EMBED_DIM];
        let temb = time_embedding(train_t);
        let mut input = Vec::with_capacity(DENOISER_INPUT);
        input.extend_from_slice(&x_t.values);
        input.extend_from_slice(&temb);
        input.extend_from_slice(emb);
        Ok(input)
    }

    /// Raw conditional noise prediction (no guidance).
    pub fn eps(&self, x_t: &Latent, train_t: usize, cond: Condition) -> Result<Latent> {
        cond.validate()?;
        let input = self.assemble_input(x_t, train_t, cond)?;
        let trace = self.spec.forward(&self.params, &input)?;
        Ok(Latent::from_slice(trace.output()))
    }
}

/// Forward noising: sqrt(a)·x0 + sqrt(1-a)·noise at cumulative retention a.
pub fn q_sample(x0: &Latent, t: usize, noise: &Latent, schedule: &NoiseSchedule) -> Result<Latent> {
    let ab = schedule.alpha_bar(t)? as f64;
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut out = [0.0f32; LATENT_DIM];
    for i in 0..LATENT_DIM {
        out[i] = (sa * x0.values[i] as f64 + sn * noise.values[i] as f64) as f32;
    }
    Ok(Latent { values: out })
}

/// One-shot clean-latent estimate from the current state and predicted
/// noise: (x_t - sqrt(1-a)·eps) / sqrt(a).
pub fn predict_x0(x_t: &Latent, eps: &Latent, t: usize, schedule: &NoiseSchedule) -> Result<Latent> {
    let ab = schedule.alpha_bar(t)? as f64;
    if ab == 0.0 {
        return Err(Error::Degenerate("clean-latent estimate undefined at zero retention".into()));
    }
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut out = [0.0f32; LATENT_DIM];
    for i in 0..LATENT_DIM {
        out[i] = ((x_t.values[i] as f64 - sn * eps.values[i] as f64) / sa) as f32;
    }
    Ok(Latent { values: out })
}

/// Deterministic reverse update: sqrt(a_prev)·x0_est + sqrt(1-a_prev)·eps.
/// `t_prev = None` is the final step and returns the clean estimate itself.
pub fn ddim_step(
    x_t: &Latent,
    eps: &Latent,
    t: usize,
    t_prev: Option<usize>,
    schedule: &NoiseSchedule,
) -> Result<Latent> {
    let x0 = predict_x0(x_t, eps, t, schedule)?;
    let tp = match t_prev {
        None => return Ok(x0),
        Some(tp) => tp,
    };
    if tp >= t {
        return Err(Error::InvalidInput(format!("reverse step must go backwards: {t} -> {tp}")));
    }
    let ab = schedule.alpha_bar(tp)? as f64;
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut out = [0.0f32; LATENT_DIM];
    for i in 0..LATENT_DIM {
        out[i] = (sa * x0.values[i] as f64 + sn * eps.values[i] as f64) as f32;
    }
    Ok(Latent { values: out })
}

/// Classifier-free guidance blend: eps_null + w·(eps_cond - eps_null).
pub fn guidance_blend(eps_null: &Latent, eps_cond: &Latent, w: f32) -> Latent {
    let mut out = [0.0f32; LATENT_DIM];
    for i in 0..LATENT_DIM {
        out[i] = eps_null.values[i] + w * (eps_cond.values[i] - eps_null.values[i]);
    }
    Latent { values: out }
}

/// Guided noise prediction. `w = 1` is exactly the conditional branch and
/// `w = 0` exactly the unconditional one.
pub fn eps_predict(
    net: &DenoiserNet,
    x_t: &Latent,
    train_t: usize,
    cond: Condition,
    w: f32,
) -> Result<Latent> {
    if w < 0.0 {
        return Err(Error::InvalidInput("guidance scale must be nonnegative".into()));
    }
    if cond == Condition::Null || w == 0.0 {
        return net.eps(x_t, train_t, Condition::Null);
    }
    if w == 1.0 {
        return net.eps(x_t, train_t, cond);
    }
    let e_null = net.eps(x_t, train_t, Condition::Null)?;
    let e_cond = net.eps(x_t, train_t, cond)?;
    Ok(guidance_blend(&e_null, &e_cond, w))
}

/// Which condition each sampling index uses. Swap plans use the source
/// above the swap index and the target at and below it, so the swap step
/// itself is the first edited one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionPlan {
    Constant(Condition),
    Swap { source: Condition, target: Condition, swap_index: usize },
}

impl ConditionPlan {
    pub fn condition_at(&self, step_index: usize) -> Condition {
        match self {
            ConditionPlan::Constant(c) => *c,
            ConditionPlan::Swap { source, target, swap_index } => {
                if step_index <= *swap_index {
                    *target
                } else {
                    *source
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ConditionPlan::Constant(c) => c.validate(),
            ConditionPlan::Swap { source, target, swap_index } => {
                source.validate()?;
                target.validate()?;
                if *swap_index >= SAMPLE_STEPS {
                    return Err(Error::InvalidInput(format!(
                        "swap index {swap_index} outside the {SAMPLE_STEPS}-step run"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Initial state of a sampling run.
#[derive(Debug, Clone)]
pub enum SampleInit {
    Seed(u64),
    State(Latent),
}

/// One record per sampling step, highest timestep first.
#[derive(Debug, Clone)]
pub struct TrajectoryStep {
    pub step_index: usize,
    pub train_t: usize,
    pub cond: Condition,
    pub x_t: Latent,
    pub eps_hat: Latent,
    pub x0_est: Latent,
    pub prediction: Option<Prediction>,
}

/// Full record of one sampling run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub x_init: Latent,
    pub steps: Vec<TrajectoryStep>,
    pub seed: Option<u64>,
    pub guidance: f32,
}

impl Trajectory {
    /// The generated latent (clean estimate of the final step).
    pub fn output(&self) -> &Latent {
        &self.steps.last().expect("trajectory has steps").x0_est
    }

    /// Predicted class ids ordered t = high..0, if every step was probed.
    pub fn predicted_classes(&self) -> Option<Vec<usize>> {
        self.steps.iter().map(|s| s.prediction.as_ref().map(|p| p.class_id)).collect()
    }
}

/// Run the deterministic sampler. The probe, when given, sees the clean
/// estimate and the sampling index at every step; it cannot alter the
/// trajectory.
pub fn sample(
    net: &DenoiserNet,
    schedule: &NoiseSchedule,
    init: SampleInit,
    plan: ConditionPlan,
    w: f32,
    mut probe: Option<&mut dyn FnMut(&Latent, usize) -> Prediction>,
) -> Result<Trajectory> {
    plan.validate()?;
    let (x_init, seed) = match init {
        SampleInit::Seed(s) => {
            let mut r = rng::stream(s, "sample_init");
            let mut v = [0.0f32; LATENT_DIM];
            for vi in v.iter_mut() {
                *vi = r.sample(StandardNormal);
            }
            (Latent { values: v }, Some(s))
        }
        SampleInit::State(x) => (x, None),
    };

    let n = schedule.num_sampling_steps();
    let mut steps = Vec::with_capacity(n);
    let mut x = x_init.clone();
    for i in (0..n).rev() {
        let t = schedule.train_t(i);
        let cond = plan.condition_at(i);
        let eps = eps_predict(net, &x, t, cond, w)?;
        let x0_est = predict_x0(&x, &eps, t, schedule)?;
        let prediction = probe.as_mut().map(|p| p(&x0_est, i));
        let t_prev = if i > 0 { Some(schedule.train_t(i - 1)) } else { None };
        let x_next = ddim_step(&x, &eps, t, t_prev, schedule)?;
        steps.push(TrajectoryStep {
            step_index: i,
            train_t: t,
            cond,
            x_t: x.clone(),
            eps_hat: eps,
            x0_est,
            prediction,
        });
        x = x_next;
    }
    Ok(Trajectory { x_init, steps, seed, guidance: w })
}

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f32,
    pub cond_dropout: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { steps: 30000, batch: 64, lr: 1e-3, cond_dropout: 0.1 }
    }
}

/// Train the denoiser to predict the injected noise, replacing the
/// condition with the null branch at the dropout rate. Deterministic given
/// the seed. Returns the net and a `(step, mean loss)` log sampled every
/// 100 steps.
pub fn train_denoiser(
    latents: &[Latent],
    labels: &[usize],
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(DenoiserNet, Vec<(u64, f32)>)> {
    if latents.is_empty() || latents.len() != labels.len() {
        return Err(Error::InvalidInput("denoiser training needs matching latents and labels".into()));
    }
    let mut net = DenoiserNet::new(seed);
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr));
    let mut r = rng::stream(seed, "train_denoiser");
    let t_train = schedule.t_train();

    let mut log = Vec::new();
    let mut window_sum = 0.0f64;
    let mut window_n = 0u32;
    let mut grads = Gradients::new();

    for step in 0..cfg.steps {
        grads.clear();
        let mut batch_loss = 0.0f64;
        for _ in 0..cfg.batch {
            let idx = r.gen_range(0..latents.len());
            let t = r.gen_range(0..t_train);
            let dropped: f32 = r.gen();
            let cond = if dropped < cfg.cond_dropout {
                Condition::Null
            } else {
                Condition::Instrument(labels[idx])
            };
            let mut noise = [0.0f32; LATENT_DIM];
            for v in noise.iter_mut() {
                *v = r.sample(StandardNormal);
            }
            let noise = Latent { values: noise };
            let x_t = q_sample(&latents[idx], t, &noise, schedule)?;

            let input = net.assemble_input(&x_t, t, cond)?;
            let trace = net.spec.forward(&net.params, &input)?;
            let (loss, dout) = mse(trace.output(), &noise.values)?;
            batch_loss += loss as f64;
            let dinput = net.spec.backward(&net.params, &trace, &dout, &mut grads)?;

            // route the condition slice of the input gradient into the
            // embedding table
            let row = cond.embed_row();
            let table_grad =
                grads.accumulate(COND_EMBED_NAME, (NUM_CLASSES + 1) * COND_EMBED_DIM);
            let base = row * COND_EMBED_DIM;
            for (k, g) in dinput[LATENT_DIM + TIME_EMBED_DIM..].iter().enumerate() {
                table_grad[base + k] += g;
            }
        }
        batch_loss /= cfg.batch as f64;
        if !batch_loss.is_finite() {
            return Err(Error::TrainingFailure(format!(
                "non-finite denoiser loss at step {step}"
            )));
        }
        grads.scale(1.0 / cfg.batch as f32);
        adam_step(&mut net.params, &grads, &mut adam)?;

        window_sum += batch_loss;
        window_n += 1;
        if (step + 1) % 100 == 0 || step + 1 == cfg.steps {
            log.push((step as u64 + 1, (window_sum / window_n as f64) as f32));
            window_sum = 0.0;
            window_n = 0;
        }
    }
    Ok((net, log))
}

/// Dump a trajectory as JSON lines with base64-encoded f32 state arrays.
pub fn dump_trajectory_jsonl(traj: &Trajectory, path: &Path) -> Result<()> {
    fn b64(latent: &Latent) -> String {
        let mut bytes = Vec::with_capacity(LATENT_DIM * 4);
        for v in latent.values.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        base64::engine::general_purpose::STANDARD.encode(bytes)
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header = serde_json::json!({
        "type": "init",
        "x_init": b64(&traj.x_init),
        "seed": traj.seed,
        "guidance": traj.guidance,
        "steps": traj.steps.len(),
    });
    writeln!(out, "{header}")?;
    for s in &traj.steps {
        let line = serde_json::json!({
            "type": "step",
            "step_index": s.step_index,
            "train_t": s.train_t,
            "cond": s.cond.label(),
            "x_t": b64(&s.x_t),
            "eps_hat": b64(&s.eps_hat),
            "x0_est": b64(&s.x0_est),
            "pred_class": s.prediction.as_ref().map(|p| p.class_id),
            "pred_confidence": s.prediction.as_ref().map(|p| p.confidence),
        });
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

//! Markov-chain Monte Carlo estimate of the ideal observer for the
//! lumpy-background task.
//!
//! The chain targets `pr(θ | g, H0) ∝ pr(g | b(θ), H0) pr(θ)` with a Poisson
//! prior on the lump count and uniform lump centers, and the statistic is
//! the posterior mean of the BKE likelihood ratio. Both the image-space IO
//! and the channelized IO run in a whitened measurement space `y = W g`
//! where the noise is white with unit variance: `W = I / σ` for images and
//! `W = L⁻¹ T / σ` for a channel bank `T` with `T Tᵀ = L Lᵀ`. In that space
//! `log pr(y | θ) = -½‖y - W b(θ)‖² + const` and
//! `log Λ_BKE = ŝᵀ(y - W b(θ)) - ½‖ŝ‖²` with `ŝ = W s`.

use nalgebra::{DMatrix, DVector, DVectorView};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::TemplateSpace;
use crate::channels::{gram_matrix, ChannelBank};
use crate::imaging::{GaussianOperator, TaskModel};
use crate::rng::{stream, Domain, StreamRng};
use crate::task::{FieldOfView, LumpyModelParams, LumpyState, Point};
use crate::{Error, Result};

/// Lump-count truncation of the sampler's state space.
pub const DEFAULT_MAX_LUMPS: usize = 50;
const ACCEPTANCE_WARN_RANGE: (f64, f64) = (0.1, 0.7);
const TARGET_MOVE_ACCEPTANCE: f64 = 0.3;
const REFINE_PASSES: usize = 20;
const MAX_JUMPS: usize = 10;
const JUMP_PASSES: usize = 3;
/// Smallest log-posterior gain the start-state search counts as progress.
const REFINE_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalConfig {
    pub move_prob: f64,
    pub birth_prob: f64,
    pub death_prob: f64,
    /// Standard deviation of the center perturbation; `None` uses the lump width.
    #[serde(default)]
    pub move_std: Option<f64>,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            move_prob: 0.8,
            birth_prob: 0.1,
            death_prob: 0.1,
            move_std: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    /// Total chain length including burn-in.
    pub n_steps: usize,
    pub burn_in: usize,
    #[serde(default)]
    pub proposal: ProposalConfig,
    pub seed: u64,
    #[serde(default = "default_max_lumps")]
    pub max_lumps: usize,
    /// Tune `move_std` toward a fixed move acceptance during burn-in only.
    #[serde(default = "default_true")]
    pub adapt_during_burn_in: bool,
    /// Steps between full recomputations of the running residual.
    #[serde(default = "default_refresh")]
    pub refresh_interval: usize,
}

fn default_max_lumps() -> usize {
    DEFAULT_MAX_LUMPS
}

fn default_true() -> bool {
    true
}

fn default_refresh() -> usize {
    2000
}

impl McmcConfig {
    /// Reduced chain for desk-scale runs: 20,000 steps, 500 burn-in.
    pub fn desk(seed: u64) -> Self {
        Self {
            n_steps: 20_000,
            burn_in: 500,
            proposal: ProposalConfig::default(),
            seed,
            max_lumps: DEFAULT_MAX_LUMPS,
            adapt_during_burn_in: true,
            refresh_interval: default_refresh(),
        }
    }

    /// Full-scale chain: 200,000 steps, 1,000 burn-in.
    pub fn paper(seed: u64) -> Self {
        Self {
            n_steps: 200_000,
            burn_in: 1_000,
            ..Self::desk(seed)
        }
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk(seed)),
            "paper" => Ok(Self::paper(seed)),
            other => Err(Error::InvalidParameter(format!(
                "unknown MCMC preset {other:?} (expected \"desk\" or \"paper\")"
            ))),
        }
    }

    pub fn samples(&self) -> usize {
        self.n_steps - self.burn_in
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_steps {
            return Err(Error::InvalidParameter(format!(
                "burn-in ({}) must be shorter than the chain ({})",
                self.burn_in, self.n_steps
            )));
        }
        let p = &self.proposal;
        let probs = [p.move_prob, p.birth_prob, p.death_prob];
        if probs.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
            return Err(Error::InvalidParameter("proposal probabilities must be non-negative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "proposal probabilities must sum to 1, got {total}"
            )));
        }
        if let Some(s) = p.move_std {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidParameter(format!("move_std must be positive, got {s}")));
            }
        }
        if self.refresh_interval == 0 {
            return Err(Error::InvalidParameter("refresh_interval must be at least 1".into()));
        }
        Ok(())
    }
}

/// Initial chain state.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ChainStart {
    /// Deterministic greedy fit on a lattice of candidate centers.
    #[default]
    Greedy,
    Empty,
    /// Start from a given state.
    State(LumpyState),
    /// No proposals: the chain stays at the given state (known background).
    Pinned(LumpyState),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    /// `log( (1/J) Σ_j Λ_BKE(g | b(θ_j)) )` over post-burn-in steps.
    pub log_statistic: f64,
    pub samples: usize,
    pub move_acceptance: f64,
    pub birth_acceptance: f64,
    pub death_acceptance: f64,
    /// Accepted over attempted proposals of any kind.
    pub acceptance: f64,
    pub final_move_std: f64,
    pub initial_lump_count: usize,
    pub mean_lump_count: f64,
    /// Post-burn-in visits per lump count `0..=max_lumps`.
    pub lump_count_histogram: Vec<u64>,
    pub final_state: LumpyState,
}

#[derive(Default)]
struct Counter {
    tried: u64,
    accepted: u64,
}

impl Counter {
    fn record(&mut self, accepted: bool) {
        self.tried += 1;
        self.accepted += accepted as u64;
    }

    fn rate(&self) -> f64 {
        if self.tried == 0 {
            0.0
        } else {
            self.accepted as f64 / self.tried as f64
        }
    }
}

/// Running `log Σ exp(x_j)` with max shift.
#[derive(Debug, Clone, Copy)]
struct LogSumExp {
    max: f64,
    sum: f64,
}

impl LogSumExp {
    fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    fn push(&mut self, x: f64) {
        if x <= self.max {
            self.sum += (x - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    fn value(&self) -> f64 {
        self.max + self.sum.ln()
    }
}

/// Likelihood model and proposal geometry shared by every chain of one
/// observer (image-space IO or one channel bank's CIO).
#[derive(Debug, Clone)]
pub struct IdealObserver {
    operator: GaussianOperator,
    lumpy: LumpyModelParams,
    space: TemplateSpace,
    sigma: f64,
    /// `L⁻¹ T / σ` for channel space.
    whitener: Option<DMatrix<f64>>,
    /// `L⁻¹ / σ`, applied to already channelized data.
    channel_whitener: Option<DMatrix<f64>>,
    signal: DVector<f64>,
    signal_energy: f64,
    candidates: Vec<Point>,
    candidate_responses: DMatrix<f64>,
    candidate_energy: Vec<f64>,
}

impl IdealObserver {
    pub fn image_space(model: &TaskModel) -> Result<Self> {
        model.noise().validate()?;
        let sigma = model.noise().std_dev;
        let signal = &model.signal.values / sigma;
        Self::finish(model, TemplateSpace::Image, sigma, None, None, signal)
    }

    /// Channelized observer for `bank`; the bank need not be orthonormal.
    pub fn channel_space(model: &TaskModel, bank: &ChannelBank) -> Result<Self> {
        model.noise().validate()?;
        if bank.num_pixels() != model.num_pixels() {
            return Err(Error::DimensionMismatch {
                what: "channel bank vs task",
                expected: model.num_pixels(),
                found: bank.num_pixels(),
            });
        }
        let sigma = model.noise().std_dev;
        let gram = gram_matrix(bank);
        let d = gram.nrows();
        let chol = gram.cholesky().ok_or(Error::Singular {
            what: "channel Gram matrix",
            condition_estimate: f64::INFINITY,
        })?;
        let linv = chol
            .l()
            .solve_lower_triangular(&DMatrix::identity(d, d))
            .ok_or(Error::Singular {
                what: "channel Gram factor",
                condition_estimate: f64::INFINITY,
            })?;
        let channel_whitener = linv / sigma;
        let whitener = &channel_whitener * &bank.matrix;
        let signal = &whitener * &model.signal.values;
        Self::finish(
            model,
            TemplateSpace::Channel,
            sigma,
            Some(whitener),
            Some(channel_whitener),
            signal,
        )
    }

    fn finish(
        model: &TaskModel,
        space: TemplateSpace,
        sigma: f64,
        whitener: Option<DMatrix<f64>>,
        channel_whitener: Option<DMatrix<f64>>,
        signal: DVector<f64>,
    ) -> Result<Self> {
        let signal_energy = signal.norm_squared();
        let mut obs = Self {
            operator: model.operator.clone(),
            lumpy: *model.lumpy(),
            space,
            sigma,
            whitener,
            channel_whitener,
            signal,
            signal_energy,
            candidates: candidate_lattice(model.fov(), 0.5 * model.lumpy().width),
            candidate_responses: DMatrix::zeros(0, 0),
            candidate_energy: Vec::new(),
        };
        let dim = obs.dim();
        let mut responses = DMatrix::zeros(dim, obs.candidates.len());
        let mut scratch = vec![0.0; obs.operator.num_measurements()];
        let mut col = DVector::zeros(dim);
        for (k, &c) in obs.candidates.iter().enumerate() {
            obs.lump_response(c, &mut scratch, &mut col);
            responses.set_column(k, &col);
        }
        obs.candidate_energy = responses.column_iter().map(|c| c.norm_squared()).collect();
        obs.candidate_responses = responses;
        Ok(obs)
    }

    pub fn space(&self) -> TemplateSpace {
        self.space
    }

    /// Dimension of the whitened measurement space.
    pub fn dim(&self) -> usize {
        match &self.whitener {
            Some(w) => w.nrows(),
            None => self.operator.num_measurements(),
        }
    }

    /// Whitened signal `ŝ = W s`.
    pub fn whitened_signal(&self) -> &DVector<f64> {
        &self.signal
    }

    /// `W g` for an image `g`.
    pub fn whiten_image(&self, g: &DVector<f64>) -> Result<DVector<f64>> {
        if g.len() != self.operator.num_measurements() {
            return Err(Error::DimensionMismatch {
                what: "image",
                expected: self.operator.num_measurements(),
                found: g.len(),
            });
        }
        Ok(match &self.whitener {
            Some(w) => w * g,
            None => g / self.sigma,
        })
    }

    /// `L⁻¹ v / σ` for a channelized vector `v = T g`.
    pub fn whiten_channels(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let cw = self.channel_whitener.as_ref().ok_or_else(|| {
            Error::InvalidParameter("image-space observer cannot take channelized data".into())
        })?;
        if v.len() != cw.ncols() {
            return Err(Error::DimensionMismatch {
                what: "channelized vector",
                expected: cw.ncols(),
                found: v.len(),
            });
        }
        Ok(cw * v)
    }

    fn lump_response(&self, center: Point, scratch: &mut [f64], out: &mut DVector<f64>) {
        scratch.fill(0.0);
        self.operator.accumulate_lump(&self.lumpy, center, scratch);
        match &self.whitener {
            Some(w) => {
                let h = DVectorView::from_slice(scratch, scratch.len());
                out.gemv(1.0, w, &h, 0.0);
            }
            None => {
                let inv = 1.0 / self.sigma;
                for (o, s) in out.iter_mut().zip(scratch.iter()) {
                    *o = s * inv;
                }
            }
        }
    }

    /// Whitened noiseless background `W b(θ)`.
    pub fn whitened_background(&self, state: &LumpyState) -> DVector<f64> {
        let dim = self.dim();
        let mut total = DVector::zeros(dim);
        let mut scratch = vec![0.0; self.operator.num_measurements()];
        let mut col = DVector::zeros(dim);
        for &c in &state.centers {
            self.lump_response(c, &mut scratch, &mut col);
            total += &col;
        }
        total
    }

    /// `log Λ_BKE(y | b(θ))` for whitened data `y`.
    pub fn log_bke(&self, y: &DVector<f64>, state: &LumpyState) -> f64 {
        let e = y - self.whitened_background(state);
        self.signal.dot(&e) - 0.5 * self.signal_energy
    }

    /// `log pr(y | θ)` up to an additive constant.
    pub fn log_likelihood(&self, y: &DVector<f64>, state: &LumpyState) -> f64 {
        -0.5 * (y - self.whitened_background(state)).norm_squared()
    }

    fn greedy_start(&self, y: &DVector<f64>, max_lumps: usize) -> LumpyState {
        let lambda = self.lumpy.mean_count;
        let mut e = y.clone();
        let mut centers: Vec<Point> = Vec::new();
        while centers.len() < max_lumps {
            let scores = self.candidate_responses.tr_mul(&e);
            let prior = (lambda / (centers.len() + 1) as f64).ln();
            let best = scores
                .iter()
                .zip(&self.candidate_energy)
                .map(|(s, q)| s - 0.5 * q + prior)
                .enumerate()
                .fold((usize::MAX, 0.0), |acc, (k, g)| if g > acc.1 { (k, g) } else { acc });
            if best.0 == usize::MAX {
                break;
            }
            e -= self.candidate_responses.column(best.0);
            centers.push(self.candidates[best.0]);
        }
        let (mut centers, mut best) = self.refine_start(y, centers, max_lumps, REFINE_PASSES);
        // Pairs of misplaced lumps are a common trap for one-lump-at-a-time
        // search; dropping a lump and refitting the rest gets out of most.
        let mut jumps = 0;
        'outer: while jumps < MAX_JUMPS {
            for k in 0..centers.len() {
                let mut trial = centers.clone();
                trial.remove(k);
                let (trial, value) = self.refine_start(y, trial, max_lumps, JUMP_PASSES);
                if value > best + REFINE_TOL {
                    let (trial, value) = self.refine_start(y, trial, max_lumps, REFINE_PASSES);
                    centers = trial;
                    best = value;
                    jumps += 1;
                    continue 'outer;
                }
            }
            break;
        }
        LumpyState::new(centers)
    }

    /// Local search from the greedy fit: each lump is in turn removed and
    /// put back at the better of its refined old position and the refined
    /// best lattice site, then single deaths and births are tried. The
    /// objective is the same log posterior the birth/death moves use.
    fn refine_start(
        &self,
        y: &DVector<f64>,
        mut centers: Vec<Point>,
        max_lumps: usize,
        passes: usize,
    ) -> (Vec<Point>, f64) {
        let lambda = self.lumpy.mean_count;
        let dim = self.dim();
        let mut scratch = vec![0.0; self.operator.num_measurements()];
        let mut col = DVector::zeros(dim);
        let mut contributions: Vec<DVector<f64>> = centers
            .iter()
            .map(|&c| {
                self.lump_response(c, &mut scratch, &mut col);
                col.clone()
            })
            .collect();
        let mut e = y.clone();
        for c in &contributions {
            e -= c;
        }
        for _ in 0..passes {
            let mut improved = false;
            for k in 0..centers.len() {
                e += &contributions[k];
                let current = self.place_gain(centers[k], &e, &mut scratch, &mut col);
                let site = self.best_site(&e).0;
                let a = self.polish(centers[k], &e, &mut scratch, &mut col);
                let b = self.polish(self.candidates[site], &e, &mut scratch, &mut col);
                let best = if b.1 > a.1 { b } else { a };
                if best.1 > current + REFINE_TOL {
                    improved = true;
                    centers[k] = best.0;
                }
                self.place_gain(centers[k], &e, &mut scratch, &mut col);
                e -= &col;
                contributions[k].copy_from(&col);
            }
            // the single best death, if it raises the posterior
            let n = centers.len();
            if n > 0 {
                let (k, g) = contributions
                    .iter()
                    .map(|r| -e.dot(r) - 0.5 * r.norm_squared())
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (k, g)| if g > acc.1 { (k, g) } else { acc });
                if g + (n as f64 / lambda).ln() > 1e-9 {
                    e += &contributions.swap_remove(k);
                    centers.swap_remove(k);
                    continue;
                }
            }
            if n < max_lumps {
                let site = self.best_site(&e).0;
                let (c, g) = self.polish(self.candidates[site], &e, &mut scratch, &mut col);
                if g + (lambda / (n + 1) as f64).ln() > 1e-9 {
                    self.place_gain(c, &e, &mut scratch, &mut col);
                    e -= &col;
                    contributions.push(col.clone());
                    centers.push(c);
                    improved = true;
                }
            }
            if !improved {
                break;
            }
        }
        let prior: f64 = (1..=centers.len()).map(|i| (lambda / i as f64).ln()).sum();
        (centers, prior - 0.5 * e.norm_squared())
    }

    /// Log-likelihood gain of adding one lump at `c` to residual `e`;
    /// leaves the lump's response in `col`.
    fn place_gain(&self, c: Point, e: &DVector<f64>, scratch: &mut [f64], col: &mut DVector<f64>) -> f64 {
        self.lump_response(c, scratch, col);
        e.dot(col) - 0.5 * col.norm_squared()
    }

    /// Compass search for the best single-lump position near `start`.
    fn polish(&self, start: Point, e: &DVector<f64>, scratch: &mut [f64], col: &mut DVector<f64>) -> (Point, f64) {
        let fov = self.operator.fov();
        let mut best = (start, self.place_gain(start, e, scratch, col));
        let mut h = 0.25 * self.lumpy.width;
        while h > 0.02 * self.lumpy.width {
            let mut moved = false;
            for d in [[h, 0.0], [-h, 0.0], [0.0, h], [0.0, -h]] {
                let c = [best.0[0] + d[0], best.0[1] + d[1]];
                if !fov.contains(c) {
                    continue;
                }
                let g = self.place_gain(c, e, scratch, col);
                if g > best.1 {
                    best = (c, g);
                    moved = true;
                }
            }
            if !moved {
                h *= 0.5;
            }
        }
        best
    }

    /// Lattice site with the largest single-lump gain against residual `e`.
    fn best_site(&self, e: &DVector<f64>) -> (usize, f64) {
        let scores = self.candidate_responses.tr_mul(e);
        scores
            .iter()
            .zip(&self.candidate_energy)
            .map(|(s, q)| s - 0.5 * q)
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (k, g)| if g > acc.1 { (k, g) } else { acc })
    }

    /// Runs one chain on whitened data `y`; `chain_index` selects the
    /// random stream under `cfg.seed`.
    pub fn run_chain(
        &self,
        y: &DVector<f64>,
        start: &ChainStart,
        cfg: &McmcConfig,
        chain_index: u64,
    ) -> Result<ChainSummary> {
        cfg.validate()?;
        if y.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "whitened data",
                expected: self.dim(),
                found: y.len(),
            });
        }
        let fov = *self.operator.fov();
        let initial = match start {
            ChainStart::Greedy => self.greedy_start(y, cfg.max_lumps),
            ChainStart::Empty => LumpyState::empty(),
            ChainStart::State(s) | ChainStart::Pinned(s) => {
                s.validate(&fov)?;
                if s.lump_count() > cfg.max_lumps {
                    return Err(Error::InvalidParameter(format!(
                        "start state has {} lumps, above max_lumps = {}",
                        s.lump_count(),
                        cfg.max_lumps
                    )));
                }
                s.clone()
            }
        };
        let move_std0 = cfg.proposal.move_std.unwrap_or(self.lumpy.width);
        if let ChainStart::Pinned(state) = start {
            let mut hist = vec![0u64; cfg.max_lumps + 1];
            hist[state.lump_count()] = cfg.samples() as u64;
            return Ok(ChainSummary {
                log_statistic: self.log_bke(y, state),
                samples: cfg.samples(),
                move_acceptance: 0.0,
                birth_acceptance: 0.0,
                death_acceptance: 0.0,
                acceptance: 0.0,
                final_move_std: move_std0,
                initial_lump_count: state.lump_count(),
                mean_lump_count: state.lump_count() as f64,
                lump_count_histogram: hist,
                final_state: state.clone(),
            });
        }
        let mut rng = stream(cfg.seed, Domain::Chain, chain_index);
        let mut chain = Chain::new(self, y, initial, cfg, move_std0);
        chain.run(&mut rng, &fov);
        let summary = chain.summary();
        if !(ACCEPTANCE_WARN_RANGE.0..=ACCEPTANCE_WARN_RANGE.1).contains(&summary.acceptance) {
            log::warn!(
                "chain {chain_index}: acceptance rate {:.3} outside [{}, {}]",
                summary.acceptance,
                ACCEPTANCE_WARN_RANGE.0,
                ACCEPTANCE_WARN_RANGE.1
            );
        }
        Ok(summary)
    }

    /// `t_IO` (log scale) for a raw image; channel observers channelize it.
    pub fn statistic_image(&self, g: &DVector<f64>, cfg: &McmcConfig, chain_index: u64) -> Result<f64> {
        let y = self.whiten_image(g)?;
        Ok(self.run_chain(&y, &ChainStart::Greedy, cfg, chain_index)?.log_statistic)
    }

    /// `t_CIO` (log scale) for a channelized vector `v = T g`.
    pub fn statistic_channels(&self, v: &DVector<f64>, cfg: &McmcConfig, chain_index: u64) -> Result<f64> {
        let y = self.whiten_channels(v)?;
        Ok(self.run_chain(&y, &ChainStart::Greedy, cfg, chain_index)?.log_statistic)
    }
}

/// Cell-centered lattice with spacing at most `spacing` covering the FOV.
fn candidate_lattice(fov: &FieldOfView, spacing: f64) -> Vec<Point> {
    let nx = (fov.extent_x / spacing).ceil().max(1.0) as usize;
    let ny = (fov.extent_y / spacing).ceil().max(1.0) as usize;
    let mut out = Vec::with_capacity(nx * ny);
    for i in 0..ny {
        for j in 0..nx {
            out.push([
                (j as f64 + 0.5) * fov.extent_x / nx as f64,
                (i as f64 + 0.5) * fov.extent_y / ny as f64,
            ]);
        }
    }
    out
}

struct Chain<'a> {
    obs: &'a IdealObserver,
    y: &'a DVector<f64>,
    cfg: &'a McmcConfig,
    centers: Vec<Point>,
    contributions: Vec<DVector<f64>>,
    residual: DVector<f64>,
    signal_dot: f64,
    move_std: f64,
    initial_count: usize,
    scratch: Vec<f64>,
    proposal: DVector<f64>,
    delta: DVector<f64>,
    moves: Counter,
    births: Counter,
    deaths: Counter,
    lse: LogSumExp,
    hist: Vec<u64>,
}

impl<'a> Chain<'a> {
    fn new(
        obs: &'a IdealObserver,
        y: &'a DVector<f64>,
        initial: LumpyState,
        cfg: &'a McmcConfig,
        move_std: f64,
    ) -> Self {
        let dim = obs.dim();
        let mut scratch = vec![0.0; obs.operator.num_measurements()];
        let contributions: Vec<DVector<f64>> = initial
            .centers
            .iter()
            .map(|&c| {
                let mut col = DVector::zeros(dim);
                obs.lump_response(c, &mut scratch, &mut col);
                col
            })
            .collect();
        let mut chain = Self {
            obs,
            y,
            cfg,
            initial_count: initial.lump_count(),
            centers: initial.centers,
            contributions,
            residual: DVector::zeros(dim),
            signal_dot: 0.0,
            move_std,
            scratch,
            proposal: DVector::zeros(dim),
            delta: DVector::zeros(dim),
            moves: Counter::default(),
            births: Counter::default(),
            deaths: Counter::default(),
            lse: LogSumExp::new(),
            hist: vec![0; cfg.max_lumps + 1],
        };
        chain.refresh();
        chain
    }

    fn refresh(&mut self) {
        self.residual.copy_from(self.y);
        for c in &self.contributions {
            self.residual -= c;
        }
        self.signal_dot = self.obs.signal.dot(&self.residual);
    }

    /// Applies background change `Δ` (whitened) to the residual.
    fn apply(&mut self, delta: &DVector<f64>, sign: f64) {
        self.residual.axpy(-sign, delta, 1.0);
        self.signal_dot -= sign * self.obs.signal.dot(delta);
    }

    fn run(&mut self, rng: &mut StreamRng, fov: &FieldOfView) {
        let p = self.cfg.proposal;
        let lambda = self.obs.lumpy.mean_count;
        let birth_ratio = (p.death_prob / p.birth_prob).ln();
        let death_ratio = (p.birth_prob / p.death_prob).ln();
        let max_lumps = self.cfg.max_lumps;
        let min_std = 0.02 * self.obs.lumpy.width;
        let max_std = fov.extent_x.max(fov.extent_y);
        let mut log_std = self.move_std.ln();
        let mut adapt_steps = 0u64;
        let half_energy = 0.5 * self.obs.signal_energy;

        for step in 0..self.cfg.n_steps {
            let u: f64 = rng.random();
            let n = self.centers.len();
            if u < p.move_prob {
                if n > 0 {
                    let k = rng.random_range(0..n);
                    let old = self.centers[k];
                    let c = [
                        old[0] + self.move_std * rng.sample::<f64, _>(StandardNormal),
                        old[1] + self.move_std * rng.sample::<f64, _>(StandardNormal),
                    ];
                    let accepted = if fov.contains(c) {
                        self.obs.lump_response(c, &mut self.scratch, &mut self.proposal);
                        self.delta.copy_from(&self.proposal);
                        self.delta -= &self.contributions[k];
                        let dll = self.residual.dot(&self.delta) - 0.5 * self.delta.norm_squared();
                        let ok = rng.random::<f64>().ln() < dll;
                        if ok {
                            let delta = std::mem::replace(&mut self.delta, DVector::zeros(0));
                            self.apply(&delta, 1.0);
                            self.delta = delta;
                            std::mem::swap(&mut self.contributions[k], &mut self.proposal);
                            self.centers[k] = c;
                        }
                        ok
                    } else {
                        false
                    };
                    self.moves.record(accepted);
                    if self.cfg.adapt_during_burn_in && step < self.cfg.burn_in {
                        adapt_steps += 1;
                        let gain = (adapt_steps as f64 + 1.0).powf(-0.6);
                        let a = if accepted { 1.0 } else { 0.0 };
                        log_std = (log_std + gain * (a - TARGET_MOVE_ACCEPTANCE))
                            .clamp(min_std.ln(), max_std.ln());
                        self.move_std = log_std.exp();
                    }
                }
            } else if u < p.move_prob + p.birth_prob {
                let accepted = if n < max_lumps {
                    let c = [rng.random::<f64>() * fov.extent_x, rng.random::<f64>() * fov.extent_y];
                    self.obs.lump_response(c, &mut self.scratch, &mut self.proposal);
                    let dll = self.residual.dot(&self.proposal) - 0.5 * self.proposal.norm_squared();
                    let log_alpha = dll + (lambda / (n + 1) as f64).ln() + birth_ratio;
                    let ok = rng.random::<f64>().ln() < log_alpha;
                    if ok {
                        let added = self.proposal.clone();
                        self.apply(&added, 1.0);
                        self.contributions.push(added);
                        self.centers.push(c);
                    }
                    ok
                } else {
                    false
                };
                self.births.record(accepted);
            } else {
                let accepted = if n > 0 {
                    let k = rng.random_range(0..n);
                    let r = &self.contributions[k];
                    let dll = -self.residual.dot(r) - 0.5 * r.norm_squared();
                    let log_alpha = dll + (n as f64 / lambda).ln() + death_ratio;
                    let ok = rng.random::<f64>().ln() < log_alpha;
                    if ok {
                        let removed = self.contributions.swap_remove(k);
                        self.centers.swap_remove(k);
                        self.apply(&removed, -1.0);
                    }
                    ok
                } else {
                    false
                };
                self.deaths.record(accepted);
            }

            if (step + 1) % self.cfg.refresh_interval == 0 {
                self.refresh();
            }
            if step >= self.cfg.burn_in {
                self.lse.push(self.signal_dot - half_energy);
                self.hist[self.centers.len()] += 1;
            }
        }
    }

    fn summary(self) -> ChainSummary {
        let samples = self.cfg.samples();
        let tried = self.moves.tried + self.births.tried + self.deaths.tried;
        let accepted = self.moves.accepted + self.births.accepted + self.deaths.accepted;
        let mean_lump_count = self
            .hist
            .iter()
            .enumerate()
            .map(|(n, &c)| n as f64 * c as f64)
            .sum::<f64>()
            / samples as f64;
        ChainSummary {
            log_statistic: self.lse.value() - (samples as f64).ln(),
            samples,
            move_acceptance: self.moves.rate(),
            birth_acceptance: self.births.rate(),
            death_acceptance: self.deaths.rate(),
            acceptance: if tried == 0 { 0.0 } else { accepted as f64 / tried as f64 },
            final_move_std: self.move_std,
            initial_lump_count: self.initial_count,
            mean_lump_count,
            lump_count_histogram: self.hist,
            final_state: LumpyState::new(self.centers),
        }
    }
}

/// MCMC estimate of `log t_IO(g)` with a greedy chain start.
pub fn mcmc_io_statistic(g: &DVector<f64>, model: &TaskModel, cfg: &McmcConfig, chain_index: u64) -> Result<f64> {
    IdealObserver::image_space(model)?.statistic_image(g, cfg, chain_index)
}

/// MCMC estimate of `log t_CIO(v)` for a channelized vector `v = T g`.
pub fn mcmc_cio_statistic(
    v: &DVector<f64>,
    bank: &ChannelBank,
    model: &TaskModel,
    cfg: &McmcConfig,
    chain_index: u64,
) -> Result<f64> {
    IdealObserver::channel_space(model, bank)?.statistic_channels(v, cfg, chain_index)
}

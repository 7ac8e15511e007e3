//! MEMOS: EMOS with spatially varying intercept and slope fields.
//!
//! `Y(s) | f̄(s) ~ N(a(s) + b(s)·f̄(s), σ²)` with `a = μ_a + w_a(s)` and
//! `b = μ_b + w_b(s)`, where `w_a`, `w_b` are independent SPDE fields on a
//! shared mesh. Given the hyperparameters `θ = (κ_a, τ_a, κ_b, τ_b, σ)` the
//! latent vector `[μ_a, μ_b, w_a, w_b]` is Gaussian, so it is integrated out
//! exactly. `θ` is sampled by random-walk Metropolis on log scale and a
//! latent vector is drawn from its conditional for every kept state.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Location, TrainingSet};
use crate::error::{Error, Result};
use crate::mesh::{build_mesh, projector, Mesh, MeshConfig, Point, Projector};
use crate::sparse::{SymMatrix, SymbolicCholesky};
use crate::spde::{assemble_fem, Design, FemOperators, SpdeOrder};
use crate::stats::{centered_quantiles, std_normal_cdf};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub kappa_a: f64,
    pub tau_a: f64,
    pub kappa_b: f64,
    pub tau_b: f64,
    pub sigma: f64,
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let all = self.to_log();
        if all.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "hyperparameters must be positive and finite: {self:?}"
            )))
        }
    }

    /// `(log κ_a, log τ_a, log κ_b, log τ_b, log σ)`
    pub fn to_log(&self) -> [f64; 5] {
        [self.kappa_a, self.tau_a, self.kappa_b, self.tau_b, self.sigma].map(f64::ln)
    }

    pub fn from_log(x: &[f64; 5]) -> Self {
        Hyperparameters {
            kappa_a: x[0].exp(),
            tau_a: x[1].exp(),
            kappa_b: x[2].exp(),
            tau_b: x[3].exp(),
            sigma: x[4].exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    pub logkappa_mean: f64,
    pub logkappa_var: f64,
    pub logtau_mean: f64,
    pub logtau_var: f64,
    /// Gamma shape and rate on the observation precision `1/σ²`.
    pub precision_shape: f64,
    pub precision_rate: f64,
    /// Prior variance of the fixed effects `μ_a`, `μ_b`.
    pub v_fix: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Priors {
            logkappa_mean: -0.082,
            logkappa_var: 1.5,
            logtau_mean: -0.878,
            logtau_var: 1.5,
            precision_shape: 1.0,
            precision_rate: 0.00005,
            v_fix: 1e6,
        }
    }
}

impl Priors {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.logkappa_var,
            self.logtau_var,
            self.precision_shape,
            self.precision_rate,
            self.v_fix,
        ];
        if positive.iter().all(|v| *v > 0.0 && v.is_finite())
            && self.logkappa_mean.is_finite()
            && self.logtau_mean.is_finite()
        {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid priors: {self:?}")))
        }
    }
}

fn normal_log_density(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln() + (x - mean).powi(2) / var)
}

/// Log prior density of `θ` expressed in the working coordinates
/// `(log κ_a, log τ_a, log κ_b, log τ_b, log σ)`.
pub fn log_prior(theta: &Hyperparameters, priors: &Priors) -> f64 {
    log_prior_working(&theta.to_log(), priors)
}

fn log_prior_working(x: &[f64; 5], p: &Priors) -> f64 {
    let fields = normal_log_density(x[0], p.logkappa_mean, p.logkappa_var)
        + normal_log_density(x[1], p.logtau_mean, p.logtau_var)
        + normal_log_density(x[2], p.logkappa_mean, p.logkappa_var)
        + normal_log_density(x[3], p.logtau_mean, p.logtau_var);
    // Gamma on the precision e^{-2ℓ}, with |d precision / dℓ| = 2e^{-2ℓ}
    let (k, r, l) = (p.precision_shape, p.precision_rate, x[4]);
    let precision = (-2.0 * l).exp();
    let gamma = k * r.ln() - libm::lgamma(k) + (k - 1.0) * (-2.0 * l) - r * precision;
    fields + gamma + std::f64::consts::LN_2 - 2.0 * l
}

/// Ordering of the latent vector `[μ_a, μ_b, w_a (K), w_b (K)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentLayout {
    pub n_vertices: usize,
}

impl LatentLayout {
    pub const MU_A: usize = 0;
    pub const MU_B: usize = 1;

    pub fn dim(&self) -> usize {
        2 + 2 * self.n_vertices
    }

    pub fn w_a(&self) -> usize {
        2
    }

    pub fn w_b(&self) -> usize {
        2 + self.n_vertices
    }

    /// Design row `[1, f̄, ψ(s), ψ(s)·f̄]` for a case with basis weights `psi`.
    pub fn design_row(&self, psi: &[(usize, f64)], fbar: f64) -> Vec<(usize, f64)> {
        let mut row = Vec::with_capacity(2 + 2 * psi.len());
        row.push((Self::MU_A, 1.0));
        row.push((Self::MU_B, fbar));
        row.extend(psi.iter().map(|&(v, w)| (self.w_a() + v, w)));
        row.extend(psi.iter().map(|&(v, w)| (self.w_b() + v, w * fbar)));
        row
    }
}

/// Prior precision of one field as `Σ_k c_k(κ, τ) · B_k`, values scattered
/// onto a fixed pattern.
#[derive(Debug)]
struct FieldBasis {
    order: SpdeOrder,
    pattern: SymMatrix,
    symbolic: Arc<SymbolicCholesky>,
    /// Basis values on `pattern`.
    basis: Vec<Vec<f64>>,
}

impl FieldBasis {
    fn new(ops: &FemOperators, order: SpdeOrder) -> Self {
        let n = ops.n_vertices();
        let c = SymMatrix::diagonal(&ops.c);
        let mut mats = vec![c, ops.g.clone()];
        if order == SpdeOrder::Alpha2 {
            let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
            for (i, j, v) in ops.g.iter() {
                cols[j].push((i, v));
                if i != j {
                    cols[i].push((j, v));
                }
            }
            let mut t = Vec::new();
            for (mid, col) in cols.iter().enumerate() {
                for &(i, vi) in col {
                    for &(j, vj) in col {
                        if i >= j {
                            t.push((i, j, vi * vj / ops.c[mid]));
                        }
                    }
                }
            }
            mats.push(SymMatrix::from_triplets(n, &t));
        }
        let mut t: Vec<(usize, usize, f64)> = Vec::new();
        for m in &mats {
            t.extend(m.iter().map(|(i, j, _)| (i, j, 0.0)));
        }
        let pattern = SymMatrix::from_triplets(n, &t);
        let basis = mats
            .iter()
            .map(|m| {
                let mut v = vec![0.0; pattern.nnz()];
                for (p, (_, _, x)) in pattern.block_positions(m, 0).into_iter().zip(m.iter()) {
                    v[p] += x;
                }
                v
            })
            .collect();
        let symbolic = Arc::new(SymbolicCholesky::analyze(&pattern));
        FieldBasis {
            order,
            pattern,
            symbolic,
            basis,
        }
    }

    fn coefficients(&self, kappa: f64, tau: f64) -> Vec<f64> {
        let (k2, t2) = (kappa * kappa, tau * tau);
        match self.order {
            SpdeOrder::Alpha1 => vec![t2 * k2, t2],
            SpdeOrder::Alpha2 => vec![t2 * k2 * k2, 2.0 * t2 * k2, t2],
        }
    }

    fn log_det(&self, kappa: f64, tau: f64) -> Result<f64> {
        let mut q = self.pattern.clone();
        let coef = self.coefficients(kappa, tau);
        for (p, v) in q.values_mut().iter_mut().enumerate() {
            *v = coef.iter().zip(&self.basis).map(|(c, b)| c * b[p]).sum();
        }
        Ok(self.symbolic.factor(&q)?.log_det())
    }
}

/// A MEMOS model bound to one training set and mesh. Sparsity patterns and
/// the symbolic factorizations are computed once and reused for every `θ`.
#[derive(Debug)]
pub struct MemosModel {
    layout: LatentLayout,
    priors: Priors,
    field: FieldBasis,
    n_obs: usize,
    yty: f64,
    xty: Vec<f64>,
    post_pattern: SymMatrix,
    post_symbolic: Arc<SymbolicCholesky>,
    /// `XᵀX` on the posterior pattern.
    post_gram: Vec<f64>,
    post_fixed: [usize; 2],
    /// Positions of the field pattern entries for `w_a` and `w_b`.
    post_field_a: Vec<usize>,
    post_field_b: Vec<usize>,
}

/// Values of the latent posterior at one `θ`.
struct Evaluation {
    log_marginal: f64,
    chol: crate::sparse::Cholesky,
    mean: Vec<f64>,
}

impl MemosModel {
    /// Builds the model for training cases located at `station_points[case.station]`.
    pub fn new(
        mesh: &Mesh,
        training: &TrainingSet,
        station_points: &[Point],
        priors: Priors,
        order: SpdeOrder,
    ) -> Result<Self> {
        priors.validate()?;
        if training.is_empty() {
            return Err(Error::Empty("training set"));
        }
        let ops = assemble_fem(mesh)?;
        let layout = LatentLayout {
            n_vertices: ops.n_vertices(),
        };
        let used = training.stations();
        let points: Vec<Point> = used.iter().map(|&s| station_points[s]).collect();
        let proj = projector(mesh, &points)?;
        let mut row_of = vec![usize::MAX; station_points.len()];
        for (k, &s) in used.iter().enumerate() {
            row_of[s] = k;
        }

        let mut design = Design::new(layout.dim());
        let mut y = Vec::with_capacity(training.len());
        for c in &training.cases {
            design
                .rows
                .push(layout.design_row(&proj.rows[row_of[c.station]], c.fbar));
            y.push(c.y);
        }
        let field = FieldBasis::new(&ops, order);

        let gram = design.gram_triplets(1.0);
        let mut t: Vec<(usize, usize, f64)> = gram.iter().map(|&(i, j, _)| (i, j, 0.0)).collect();
        t.push((0, 0, 0.0));
        t.push((1, 1, 0.0));
        for off in [layout.w_a(), layout.w_b()] {
            t.extend(field.pattern.iter().map(|(i, j, _)| (i + off, j + off, 0.0)));
        }
        let post_pattern = SymMatrix::from_triplets(layout.dim(), &t);
        let mut post_gram = vec![0.0; post_pattern.nnz()];
        for (i, j, v) in gram {
            post_gram[post_pattern.position(i, j).unwrap()] += v;
        }
        let post_fixed = [
            post_pattern.position(0, 0).unwrap(),
            post_pattern.position(1, 1).unwrap(),
        ];
        let post_field_a = post_pattern.block_positions(&field.pattern, layout.w_a());
        let post_field_b = post_pattern.block_positions(&field.pattern, layout.w_b());
        let post_symbolic = Arc::new(SymbolicCholesky::analyze(&post_pattern));

        Ok(MemosModel {
            layout,
            priors,
            field,
            n_obs: y.len(),
            yty: y.iter().map(|v| v * v).sum(),
            xty: design.t_mul(&y),
            post_pattern,
            post_symbolic,
            post_gram,
            post_fixed,
            post_field_a,
            post_field_b,
        })
    }

    pub fn layout(&self) -> LatentLayout {
        self.layout
    }

    pub fn priors(&self) -> &Priors {
        &self.priors
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    /// Prior precision of the latent vector.
    pub fn prior_precision(&self, theta: &Hyperparameters) -> SymMatrix {
        let mut t = vec![(0, 0, 1.0 / self.priors.v_fix), (1, 1, 1.0 / self.priors.v_fix)];
        for (off, kappa, tau) in [
            (self.layout.w_a(), theta.kappa_a, theta.tau_a),
            (self.layout.w_b(), theta.kappa_b, theta.tau_b),
        ] {
            let coef = self.field.coefficients(kappa, tau);
            for (p, (i, j, _)) in self.field.pattern.iter().enumerate() {
                let v: f64 = coef.iter().zip(&self.field.basis).map(|(c, b)| c * b[p]).sum();
                t.push((i + off, j + off, v));
            }
        }
        SymMatrix::from_triplets(self.layout.dim(), &t)
    }

    fn posterior_precision(&self, theta: &Hyperparameters) -> SymMatrix {
        let noise_prec = 1.0 / (theta.sigma * theta.sigma);
        let mut q = self.post_pattern.clone();
        let vals = q.values_mut();
        for (v, g) in vals.iter_mut().zip(&self.post_gram) {
            *v = noise_prec * g;
        }
        for &p in &self.post_fixed {
            vals[p] += 1.0 / self.priors.v_fix;
        }
        for (positions, kappa, tau) in [
            (&self.post_field_a, theta.kappa_a, theta.tau_a),
            (&self.post_field_b, theta.kappa_b, theta.tau_b),
        ] {
            let coef = self.field.coefficients(kappa, tau);
            for (k, &p) in positions.iter().enumerate() {
                vals[p] += coef
                    .iter()
                    .zip(&self.field.basis)
                    .map(|(c, b)| c * b[k])
                    .sum::<f64>();
            }
        }
        q
    }

    fn evaluate(&self, theta: &Hyperparameters) -> Result<Evaluation> {
        theta.validate()?;
        let noise_prec = 1.0 / (theta.sigma * theta.sigma);
        let log_det_prior = -2.0 * self.priors.v_fix.ln()
            + self.field.log_det(theta.kappa_a, theta.tau_a)?
            + self.field.log_det(theta.kappa_b, theta.tau_b)?;
        let chol = self.post_symbolic.factor(&self.posterior_precision(theta))?;
        let rhs: Vec<f64> = self.xty.iter().map(|v| v * noise_prec).collect();
        let mean = chol.solve(&rhs);
        let fit: f64 = rhs.iter().zip(&mean).map(|(r, m)| r * m).sum();
        let n = self.n_obs as f64;
        let log_marginal = -0.5 * n * LN_2PI - n * theta.sigma.ln() + 0.5 * log_det_prior
            - 0.5 * chol.log_det()
            - 0.5 * (self.yty * noise_prec - fit);
        Ok(Evaluation {
            log_marginal,
            chol,
            mean,
        })
    }

    /// `log p(y | θ)` with the latent vector integrated out.
    pub fn log_marginal(&self, theta: &Hyperparameters) -> Result<f64> {
        Ok(self.evaluate(theta)?.log_marginal)
    }

    /// Mean of the latent vector given `θ` and the data.
    pub fn latent_mean(&self, theta: &Hyperparameters) -> Result<Vec<f64>> {
        Ok(self.evaluate(theta)?.mean)
    }

    /// Draws a latent vector from its Gaussian conditional given `θ`.
    pub fn sample_latent<R: Rng + ?Sized>(&self, theta: &Hyperparameters, rng: &mut R) -> Result<Vec<f64>> {
        let e = self.evaluate(theta)?;
        let z: Vec<f64> = (0..self.layout.dim()).map(|_| rng.sample(StandardNormal)).collect();
        let dev = e.chol.sample_with(&z);
        Ok(e.mean.iter().zip(dev).map(|(m, d)| m + d).collect())
    }

    /// Unnormalized log posterior of `θ` in working coordinates.
    pub fn log_posterior(&self, theta: &Hyperparameters) -> Result<f64> {
        Ok(log_prior(theta, &self.priors) + self.log_marginal(theta)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Number of kept states.
    pub n: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Initial random-walk standard deviation in log-parameter space.
    pub initial_scale: f64,
    /// Proposal scale is retuned after every block of this many burn-in steps.
    pub adapt_interval: usize,
    pub target_low: f64,
    pub target_high: f64,
    pub min_acceptance: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n: 100,
            burn_in: 1000,
            thin: 5,
            initial_scale: 0.3,
            adapt_interval: 50,
            target_low: 0.2,
            target_high: 0.4,
            min_acceptance: 0.05,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.thin == 0 || self.adapt_interval == 0 {
            return Err(Error::InvalidArgument("n, thin and adapt_interval must be positive".into()));
        }
        if !(self.initial_scale > 0.0) || !(self.target_low < self.target_high) {
            return Err(Error::InvalidArgument("invalid proposal settings".into()));
        }
        Ok(())
    }
}

/// Posterior draws of the EMOS coefficients at a list of sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub sites: Vec<String>,
    /// `a[i][s]`: draw `i`, site `s`.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub sigma: Vec<f64>,
    pub theta: Vec<Hyperparameters>,
    /// Chain iteration of each kept state.
    pub chain_index: Vec<usize>,
    pub seed: u64,
    pub acceptance_rate: f64,
    pub proposal_scale: f64,
}

impl PosteriorDraws {
    pub fn n(&self) -> usize {
        self.sigma.len()
    }

    pub fn site_index(&self, id: &str) -> Option<usize> {
        self.sites.iter().position(|s| s == id)
    }

    /// Columnar `draw,site,a,b,sigma`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["draw", "site", "a", "b", "sigma"])?;
        for i in 0..self.n() {
            for (s, site) in self.sites.iter().enumerate() {
                w.write_record([
                    i.to_string(),
                    site.clone(),
                    self.a[i][s].to_string(),
                    self.b[i][s].to_string(),
                    self.sigma[i].to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<draws>", e))?;
        Ok(())
    }

    /// Posterior mean of `a(s) + b(s)·f̄` at site `s`, and its posterior sd.
    pub fn mean_sd_of_mean(&self, site: usize, fbar: f64) -> (f64, f64) {
        let v: Vec<f64> = (0..self.n()).map(|i| self.a[i][site] + self.b[i][site] * fbar).collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len().max(2) - 1) as f64;
        (m, var.sqrt())
    }
}

/// Random-walk Metropolis over `θ` followed by exact latent draws, with the
/// fields evaluated at `sites` through `site_projector`.
pub fn sample_posterior(
    model: &MemosModel,
    site_ids: &[String],
    site_projector: &Projector,
    init: &Hyperparameters,
    config: &SamplerConfig,
    seed: u64,
) -> Result<PosteriorDraws> {
    config.validate()?;
    if site_projector.n_rows() != site_ids.len() {
        return Err(Error::DimensionMismatch {
            expected: site_ids.len(),
            found: site_projector.n_rows(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = init.to_log();
    let mut current = model.log_posterior(init)?;
    let mut scale = config.initial_scale;

    let propose = |x: &[f64; 5], scale: f64, rng: &mut ChaCha8Rng| -> [f64; 5] {
        std::array::from_fn(|k| x[k] + scale * rng.sample::<f64, _>(StandardNormal))
    };
    // A proposal whose precision fails to factor is rejected like any other.
    let target = |x: &[f64; 5]| -> f64 {
        let t = Hyperparameters::from_log(x);
        if t.validate().is_err() {
            return f64::NEG_INFINITY;
        }
        match model.log_posterior(&t) {
            Ok(v) if v.is_finite() => v,
            _ => f64::NEG_INFINITY,
        }
    };

    let mut accepted_block = 0;
    for it in 0..config.burn_in {
        let y = propose(&x, scale, &mut rng);
        let cand = target(&y);
        if rng.random::<f64>().ln() < cand - current {
            x = y;
            current = cand;
            accepted_block += 1;
        }
        if (it + 1) % config.adapt_interval == 0 {
            let rate = accepted_block as f64 / config.adapt_interval as f64;
            if rate < config.target_low {
                scale *= 0.6 + 0.4 * rate / config.target_low;
            } else if rate > config.target_high {
                scale *= 1.0 + (rate - config.target_high) / (1.0 - config.target_high);
            }
            accepted_block = 0;
        }
    }

    let mut kept = Vec::with_capacity(config.n);
    let mut chain_index = Vec::with_capacity(config.n);
    let mut accepted = 0usize;
    let total = config.n * config.thin;
    for it in 0..total {
        let y = propose(&x, scale, &mut rng);
        let cand = target(&y);
        if rng.random::<f64>().ln() < cand - current {
            x = y;
            current = cand;
            accepted += 1;
        }
        if (it + 1) % config.thin == 0 {
            kept.push(Hyperparameters::from_log(&x));
            chain_index.push(config.burn_in + it);
        }
    }
    let acceptance_rate = accepted as f64 / total as f64;
    if acceptance_rate < config.min_acceptance {
        return Err(Error::LowAcceptance {
            rate: acceptance_rate,
        });
    }

    let layout = model.layout();
    let k = layout.n_vertices;
    let mut a = Vec::with_capacity(kept.len());
    let mut b = Vec::with_capacity(kept.len());
    for (i, theta) in kept.iter().enumerate() {
        // one independent stream per kept state
        let mut latent_rng = ChaCha8Rng::seed_from_u64(seed);
        latent_rng.set_stream(i as u64 + 1);
        let u = model.sample_latent(theta, &mut latent_rng)?;
        let wa = site_projector.apply(&u[layout.w_a()..layout.w_a() + k]);
        let wb = site_projector.apply(&u[layout.w_b()..layout.w_b() + k]);
        a.push(wa.into_iter().map(|w| u[LatentLayout::MU_A] + w).collect());
        b.push(wb.into_iter().map(|w| u[LatentLayout::MU_B] + w).collect());
    }

    Ok(PosteriorDraws {
        sites: site_ids.to_vec(),
        a,
        b,
        sigma: kept.iter().map(|t| t.sigma).collect(),
        theta: kept,
        chain_index,
        seed,
        acceptance_rate,
        proposal_scale: scale,
    })
}

/// Starting point for the chain: prior means for the fields and the
/// residual sd of a pooled least-squares fit for σ.
pub fn initial_hyperparameters(training: &TrainingSet, priors: &Priors) -> Hyperparameters {
    let pairs: Vec<(f64, f64)> = training.cases.iter().map(|c| (c.fbar, c.y)).collect();
    let sigma = crate::emos::ols_start(&pairs).sigma.max(0.1);
    Hyperparameters {
        kappa_a: priors.logkappa_mean.exp(),
        tau_a: priors.logtau_mean.exp(),
        kappa_b: priors.logkappa_mean.exp(),
        tau_b: priors.logtau_mean.exp(),
        sigma,
    }
}

/// Everything needed to go from a training window to posterior draws.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MemosConfig {
    pub priors: Priors,
    pub order: SpdeOrder,
    pub sampler: SamplerConfig,
}

/// Builds the mesh over the training stations and the prediction sites,
/// the model, and runs the sampler.
pub fn fit(
    stations: &[Location],
    training: &TrainingSet,
    sites: &[Location],
    mesh_config: &MeshConfig,
    config: &MemosConfig,
    seed: u64,
) -> Result<(Mesh, PosteriorDraws)> {
    let mut points: Vec<Point> = training.stations().iter().map(|&s| stations[s].point()).collect();
    points.extend(sites.iter().map(Location::point));
    let mesh = build_mesh(&points, mesh_config)?;
    let draws = fit_on_mesh(&mesh, stations, training, sites, config, seed)?;
    Ok((mesh, draws))
}

pub fn fit_on_mesh(
    mesh: &Mesh,
    stations: &[Location],
    training: &TrainingSet,
    sites: &[Location],
    config: &MemosConfig,
    seed: u64,
) -> Result<PosteriorDraws> {
    let station_points: Vec<Point> = stations.iter().map(Location::point).collect();
    let model = MemosModel::new(mesh, training, &station_points, config.priors, config.order)?;
    let site_points: Vec<Point> = sites.iter().map(Location::point).collect();
    let proj = projector(mesh, &site_points)?;
    let ids: Vec<String> = sites.iter().map(|s| s.id.clone()).collect();
    let init = initial_hyperparameters(training, &config.priors);
    sample_posterior(&model, &ids, &proj, &init, &config.sampler, seed)
}

/// Quantile sample `a_i + b_i·f̄ + σ_i·z_j` at one site, grouped by draw `i`
/// (`m` consecutive values per draw, ascending within each group).
pub fn predictive_sample(draws: &PosteriorDraws, site: usize, fbar: f64, m: usize) -> Vec<f64> {
    let z = centered_quantiles(m);
    let mut out = Vec::with_capacity(draws.n() * m);
    for i in 0..draws.n() {
        let mu = draws.a[i][site] + draws.b[i][site] * fbar;
        out.extend(z.iter().map(|zj| mu + draws.sigma[i] * zj));
    }
    out
}

/// CDF of the posterior predictive mixture at one site.
pub fn mixture_cdf(draws: &PosteriorDraws, site: usize, fbar: f64, x: f64) -> f64 {
    let n = draws.n();
    (0..n)
        .map(|i| std_normal_cdf((x - draws.a[i][site] - draws.b[i][site] * fbar) / draws.sigma[i]))
        .sum::<f64>()
        / n as f64
}

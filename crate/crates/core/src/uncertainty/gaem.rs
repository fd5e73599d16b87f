use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::em::{free_params, mdl_score, EmRunner};
use super::{check_data, from_matrix, GMMModel, UncertaintyError};
use crate::rng::SeedTree;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GAEMConfig {
    pub population_size: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    pub k_min: usize,
    pub k_max: usize,
    pub em_steps_per_child: usize,
    pub generations: usize,
    pub covariance_floor: f64,
    pub seed: u64,
}

impl Default for GAEMConfig {
    fn default() -> Self {
        Self {
            population_size: 50,
            crossover_prob: 0.8,
            mutation_prob: 0.08,
            k_min: 1,
            k_max: 6,
            em_steps_per_child: 5,
            generations: 40,
            covariance_floor: 1e-6,
            seed: 0,
        }
    }
}

impl GAEMConfig {
    fn validate(&self) -> Result<(), UncertaintyError> {
        if self.population_size < 2 {
            return Err(UncertaintyError::Config(format!(
                "population_size must be >= 2, got {}",
                self.population_size
            )));
        }
        if !(0.0..=1.0).contains(&self.crossover_prob) || !(0.0..=1.0).contains(&self.mutation_prob) {
            return Err(UncertaintyError::Config("crossover and mutation probabilities must lie in [0, 1]".into()));
        }
        if self.k_min < 1 || self.k_max < self.k_min {
            return Err(UncertaintyError::Config(format!(
                "need 1 <= k_min <= k_max, got {}..{}",
                self.k_min, self.k_max
            )));
        }
        if !(self.covariance_floor > 0.0) {
            return Err(UncertaintyError::Config("covariance_floor must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaemGeneration {
    pub generation: usize,
    pub best_mdl: f64,
    pub best_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaemOutcome {
    pub model: GMMModel,
    pub mdl: f64,
    /// elite after initialization (generation 0) and after every generation
    pub trace: Vec<GaemGeneration>,
}

#[derive(Clone)]
struct Individual {
    model: GMMModel,
    mdl: f64,
}

fn normalized(mut m: GMMModel) -> GMMModel {
    m.k = m.weights.len();
    let total: f64 = m.weights.iter().sum();
    if total > 0.0 {
        m.weights.iter_mut().for_each(|w| *w /= total);
    } else {
        m.weights = vec![1.0 / m.k as f64; m.k];
    }
    m
}

fn components(m: &GMMModel) -> Vec<(f64, Vec<f64>, Vec<Vec<f64>>)> {
    (0..m.k).map(|n| (m.weights[n], m.means[n].clone(), m.covariances[n].clone())).collect()
}

fn assemble(parts: Vec<(f64, Vec<f64>, Vec<Vec<f64>>)>) -> GMMModel {
    let k = parts.len();
    let mut m = GMMModel {
        k,
        weights: Vec::with_capacity(k),
        means: Vec::with_capacity(k),
        covariances: Vec::with_capacity(k),
    };
    for (w, mu, c) in parts {
        m.weights.push(w);
        m.means.push(mu);
        m.covariances.push(c);
    }
    normalized(m)
}

/// Components sorted by their first mean coordinate, so that one-point
/// crossover swaps components covering similar regions.
fn sorted_components(m: &GMMModel) -> Vec<(f64, Vec<f64>, Vec<Vec<f64>>)> {
    let mut c = components(m);
    c.sort_by(|a, b| a.1[0].total_cmp(&b.1[0]));
    c
}

/// One-point crossover on the sorted component lists: the child takes the
/// head of `a` and the tail of `b`.
fn crossover(a: &GMMModel, b: &GMMModel, cfg: &GAEMConfig, rng: &mut impl Rng) -> GMMModel {
    let (ca, cb) = (sorted_components(a), sorted_components(b));
    let cut_a = rng.random_range(1..=ca.len());
    let cut_b = rng.random_range(0..cb.len());
    let mut child: Vec<_> = ca[..cut_a].iter().cloned().chain(cb[cut_b..].iter().cloned()).collect();
    while child.len() > cfg.k_max {
        // drop the lightest component
        let i = (0..child.len()).min_by(|&i, &j| child[i].0.total_cmp(&child[j].0)).unwrap();
        child.remove(i);
    }
    assemble(child)
}

fn mutate(m: GMMModel, runner: &EmRunner, data: &[Vec<f64>], cfg: &GAEMConfig, rng: &mut impl Rng) -> GMMModel {
    let mut parts = components(&m);
    let q = m.dim();
    let can_insert = parts.len() < cfg.k_max;
    let can_delete = parts.len() > cfg.k_min;
    match rng.random_range(0..3) {
        1 if can_insert => {
            let k = parts.len() as f64 + 1.0;
            let cov = from_matrix(&(runner.data_cov() / (k * k)));
            parts.push((1.0 / k, data[rng.random_range(0..data.len())].clone(), cov));
        }
        2 if can_delete => {
            let i = rng.random_range(0..parts.len());
            parts.remove(i);
        }
        _ => {
            let i = rng.random_range(0..parts.len());
            for d in 0..q {
                let sd = parts[i].2[d][d].sqrt();
                let z: f64 = rng.sample(StandardNormal);
                parts[i].1[d] += 0.5 * sd * z;
            }
        }
    }
    assemble(parts)
}

/// Lets the component count drift into `[k_min, k_max]` after crossover.
fn clamp_k(m: GMMModel, runner: &EmRunner, data: &[Vec<f64>], cfg: &GAEMConfig, rng: &mut impl Rng) -> GMMModel {
    let mut m = m;
    while m.k < cfg.k_min {
        let mut parts = components(&m);
        let k = parts.len() as f64 + 1.0;
        parts.push((
            1.0 / k,
            data[rng.random_range(0..data.len())].clone(),
            from_matrix(&(runner.data_cov() / (k * k))),
        ));
        m = assemble(parts);
    }
    m
}

fn evaluate(m: GMMModel, runner: &EmRunner, data: &[Vec<f64>], steps: usize, rng: &mut impl Rng) -> Individual {
    match runner.run(m.clone(), steps, None, rng) {
        Ok((refined, trace)) => {
            let ll = *trace.last().expect("at least one E-step");
            let mdl = -ll + 0.5 * free_params(refined.k, refined.dim()) as f64 * (data.len() as f64).ln();
            Individual { mdl: if mdl.is_finite() { mdl } else { f64::INFINITY }, model: refined }
        }
        Err(_) => Individual { model: m, mdl: f64::INFINITY },
    }
}

fn tournament<'a>(pop: &'a [Individual], rng: &mut impl Rng) -> &'a Individual {
    let a = &pop[rng.random_range(0..pop.len())];
    let b = &pop[rng.random_range(0..pop.len())];
    if b.mdl < a.mdl {
        b
    } else {
        a
    }
}

/// Genetic EM: a population of mixtures with different component counts,
/// fitness `-MDL`, component-exchange crossover, parameter/insert/delete
/// mutation, a few EM steps per child and (mu + lambda) survival.
pub fn gaem_fit(data: &[Vec<f64>], cfg: &GAEMConfig) -> Result<GaemOutcome, UncertaintyError> {
    cfg.validate()?;
    check_data(data)?;
    if data.len() < 5 * cfg.k_max {
        return Err(UncertaintyError::Input(format!("need at least {} samples, got {}", 5 * cfg.k_max, data.len())));
    }
    let mut rng = SeedTree::new(cfg.seed).stream("gaem");
    let runner = EmRunner::new(data, cfg.covariance_floor);
    let span = cfg.k_max - cfg.k_min + 1;
    let mut pop: Vec<Individual> = (0..cfg.population_size)
        .map(|i| {
            let init = runner.initial(cfg.k_min + i % span, &mut rng);
            evaluate(init, &runner, data, cfg.em_steps_per_child, &mut rng)
        })
        .collect();
    let rank = |pop: &mut Vec<Individual>| pop.sort_by(|a, b| a.mdl.total_cmp(&b.mdl).then(a.model.k.cmp(&b.model.k)));
    rank(&mut pop);
    let mut trace = vec![GaemGeneration { generation: 0, best_mdl: pop[0].mdl, best_k: pop[0].model.k }];

    for generation in 1..=cfg.generations {
        let mut offspring = Vec::with_capacity(cfg.population_size);
        while offspring.len() < cfg.population_size {
            let a = tournament(&pop, &mut rng).model.clone();
            let b = tournament(&pop, &mut rng).model.clone();
            let mut children = if rng.random::<f64>() < cfg.crossover_prob {
                vec![crossover(&a, &b, cfg, &mut rng), crossover(&b, &a, cfg, &mut rng)]
            } else {
                vec![a, b]
            };
            for c in children.iter_mut() {
                if rng.random::<f64>() < cfg.mutation_prob {
                    *c = mutate(c.clone(), &runner, data, cfg, &mut rng);
                }
                *c = clamp_k(c.clone(), &runner, data, cfg, &mut rng);
            }
            for c in children {
                if offspring.len() < cfg.population_size {
                    offspring.push(evaluate(c, &runner, data, cfg.em_steps_per_child, &mut rng));
                }
            }
        }
        pop.extend(offspring);
        rank(&mut pop);
        pop.truncate(cfg.population_size);
        trace.push(GaemGeneration { generation, best_mdl: pop[0].mdl, best_k: pop[0].model.k });
    }

    // polish the elite with EM to convergence; EM only raises the likelihood
    let elite = pop.swap_remove(0);
    let (polished, _) = runner.run(elite.model.clone(), 2_000, Some(1e-10), &mut rng)?;
    let pol_mdl = mdl_score(&polished, data)?;
    let (model, mdl) = if pol_mdl <= elite.mdl { (polished, pol_mdl) } else { (elite.model, elite.mdl) };
    Ok(GaemOutcome { model, mdl, trace })
}

pub fn write_fit_report<W: std::io::Write>(trace: &[GaemGeneration], w: W) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["generation", "best_mdl", "best_k"])?;
    for g in trace {
        wr.write_record([g.generation.to_string(), format!("{:.9}", g.best_mdl), g.best_k.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

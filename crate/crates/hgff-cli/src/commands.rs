//! One function per subcommand; each streams its records through the sink.

use crate::config::*;
use crate::output::Sink;
use hgff::corrector::{homogenized_estimate, homogenized_sample, sample_conductance, CorrectorSolver};
use hgff::fluctuation::{c0, c1_check, c2_offdiag_with_degree, q_tensor_grid, second_moment, CorrectorMethod, MehlerParams, QParams};
use hgff::gff::{field_bytes, harmonicity_check, GffSampler, GffSpec};
use hgff::green::{green_value, triple_grad_decay_check, GreenTable, DEFAULT_ORDER};
use hgff::lattice::{SiteField, TorusGrid};
use hgff::markov::{nonlocality_witness, quartic_divisibility, HalfSpace};
use serde_json::json;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub enum RunError {
    Numeric(hgff::Error),
    Io(std::io::Error),
}

impl From<hgff::Error> for RunError {
    fn from(e: hgff::Error) -> Self {
        RunError::Numeric(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

type Result<T> = std::result::Result<T, RunError>;

/// Relative paths land under `$HGFF_OUTPUT_DIR` when it is set.
pub fn resolve(path: &Path) -> PathBuf {
    match std::env::var_os("HGFF_OUTPUT_DIR") {
        Some(dir) if path.is_relative() => Path::new(&dir).join(path),
        _ => path.to_path_buf(),
    }
}

pub fn run(cmd: &Command, sink: &mut Sink) -> Result<()> {
    match cmd {
        Command::Green(a) => green(a, sink),
        Command::Corrector(a) => corrector(a, sink),
        Command::Qtensor(a) => qtensor(a, sink),
        Command::Expansion(a) => expansion(a, sink),
        Command::GffSample(a) => gff_sample(a, sink),
        Command::MarkovTest(a) => markov_test(a, sink),
        Command::MatrixLemma(a) => matrix_lemma(a, sink),
    }
}

fn green(a: &GreenArgs, sink: &mut Sink) -> Result<()> {
    for x in &a.points.0 {
        let g = green_value(x, a.lambda, a.d, a.order)?;
        sink.record("green_value", json!({ "x": x, "lambda": a.lambda, "value": g.value, "error": g.error }))?;
    }
    if let Some(r) = a.hessian_radius {
        let table = GreenTable::build(a.d, a.lambda, r + 1, a.order)?;
        for i in 0..a.d {
            for j in i..a.d {
                let s = table.hessian_l2_sum(i, j, r)?;
                sink.record("hessian_sum", json!({ "i": i + 1, "j": j + 1, "radius": r, "lambda": a.lambda, "sum": s }))?;
            }
        }
    }
    if let Some(r) = a.decay_radius {
        sink.record("decay_fit", triple_grad_decay_check(&a.decay_lambdas.0, r)?)?;
    }
    Ok(())
}

fn unit(d: usize, j: usize) -> Vec<f64> {
    let mut e = vec![0.0; d];
    e[j] = 1.0;
    e
}

fn corrector(a: &CorrectorArgs, sink: &mut Sink) -> Result<()> {
    let grid = TorusGrid::new(a.d, a.l)?;
    let solver = CorrectorSolver::new(grid);
    let dirs: Vec<usize> = match &a.directions {
        Some(l) => l.0.iter().map(|j| j - 1).collect(),
        None => (0..a.d).collect(),
    };
    let full = dirs == (0..a.d).collect::<Vec<_>>();
    let seeds: Vec<u64> = match &a.seeds {
        Some(s) => s.0.clone(),
        None => (a.seed..a.seed + a.samples).collect(),
    };
    let mut samples = Vec::new();
    for &seed in &seeds {
        let env = sample_conductance(grid, a.profile, a.tau, seed)?;
        let sols = dirs.iter().map(|&j| solver.solve(&env, &unit(a.d, j), a.lambda, a.tol)).collect::<hgff::Result<Vec<_>>>()?;
        let residual = sols.iter().map(|s| s.residual).fold(0.0, f64::max);
        let iterations: Vec<usize> = sols.iter().map(|s| s.iterations).collect();
        let abar = if full { Some(homogenized_sample(&env, &sols)?.as_slice().to_vec()) } else { None };
        sink.record("corrector", json!({ "seed": seed, "residual": residual, "iterations": iterations, "abar_sample": abar }))?;
        if full {
            samples.push((env, sols));
        }
    }
    if full && samples.len() >= 2 {
        let est = homogenized_estimate(&samples)?;
        sink.record("homogenized", json!({ "matrix": est.matrix.as_slice(), "stderr": est.stderr, "samples": samples.len() }))?;
    }
    Ok(())
}

fn q_params(d: usize, l: usize, profile: hgff::corrector::Profile, xi: &[f64], n_env: usize, seed: u64) -> Result<QParams> {
    let mut p = QParams::new(TorusGrid::new(d, l)?, profile, xi.to_vec());
    p.n_env = n_env;
    p.seed = seed;
    Ok(p)
}

fn qtensor(a: &QtensorArgs, sink: &mut Sink) -> Result<()> {
    let mut p = q_params(a.d, a.l, a.profile, &a.xi.0, a.samples, a.seed)?;
    p.lambda = a.lambda;
    p.mehler = MehlerParams { nodes: a.nodes, pairs: a.pairs };
    p.method = match a.method {
        Method::Neumann => CorrectorMethod::Neumann { order: a.neumann_order },
        Method::Cg => CorrectorMethod::Cg { tol: a.cg_tol },
    };
    p.control_variate = !a.no_control_variate;
    let taus = a.taus.as_ref().map(|t| t.0.clone()).unwrap_or_else(|| a.tau.into_iter().collect());
    let samples = q_tensor_grid(&p, &taus)?;
    let mut csv = match &a.csv {
        Some(path) => {
            let mut w = csv::Writer::from_path(resolve(path)).map_err(std::io::Error::other)?;
            w.write_record(["tau", "i", "j", "value", "stderr"]).map_err(std::io::Error::other)?;
            Some(w)
        }
        None => None,
    };
    for t in 0..taus.len() {
        let est = samples.estimate(t);
        if let Some(w) = csv.as_mut() {
            for i in 0..a.d {
                for j in 0..a.d {
                    let e = est.get(i, j);
                    let row = [taus[t].to_string(), (i + 1).to_string(), (j + 1).to_string(), e.value.to_string(), e.stderr.to_string()];
                    w.write_record(row).map_err(std::io::Error::other)?;
                }
            }
            w.flush()?;
        }
        sink.record("qtensor", est)?;
    }
    Ok(())
}

fn expansion(a: &ExpansionArgs, sink: &mut Sink) -> Result<()> {
    let (i, j) = (a.i - 1, a.j - 1);
    match a.check {
        Check::C0 => sink.record("c0", json!({ "matrix": c0(a.profile, &a.xi.0), "second_moment": second_moment(a.profile) }))?,
        Check::C1 => {
            let p = q_params(a.d, a.l, a.profile, &a.xi.0, a.samples, a.seed)?;
            let fit = c1_check(&p, &a.taus.0, i, j)?;
            let c1 = fit.coeff(1);
            sink.record("c1", json!({ "i": a.i, "j": a.j, "value": c1.value, "stderr": c1.stderr, "z": c1.value / c1.stderr, "fit": fit }))?;
        }
        Check::C2 => {
            let table = GreenTable::build(a.d, 0.0, a.radius + 1, DEFAULT_ORDER)?;
            let r = c2_offdiag_with_degree(a.profile, &a.xi.0, i, j, &table, a.radius, a.degree)?;
            sink.record("c2", json!({ "i": a.i, "j": a.j, "radius": a.radius, "degree": a.degree, "report": r }))?;
        }
    }
    Ok(())
}

fn mask_sites(grid: &TorusGrid, mask: &Mask) -> Vec<bool> {
    let l = grid.l() as f64;
    (0..grid.sites())
        .map(|s| {
            let x = grid.coords(s);
            match mask {
                Mask::HalfSpace { normal, offset } => x.iter().zip(normal).map(|(&c, n)| c as f64 * n).sum::<f64>() < *offset,
                Mask::Ball { center, radius } => {
                    let d2: f64 = x
                        .iter()
                        .zip(center)
                        .map(|(&c, m)| {
                            let t = (c as f64 - m).rem_euclid(l);
                            t.min(l - t).powi(2)
                        })
                        .sum();
                    d2.sqrt() < *radius
                }
            }
        })
        .collect()
}

fn moments(f: &SiteField) -> serde_json::Value {
    let v = &f.values;
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    json!({ "mean": mean, "variance": var, "min": min, "max": max })
}

fn gff_sample(a: &GffArgs, sink: &mut Sink) -> Result<()> {
    let grid = TorusGrid::new(a.d, a.l)?;
    let abar = spd(&a.abar, "abar").map_err(|e| hgff::Error::Domain(e.0))?;
    let q = spd(&a.q, "q").map_err(|e| hgff::Error::Domain(e.0))?;
    let sampler = GffSampler::new(GffSpec::new(abar.clone(), q, grid, a.seed)?);
    let mask = a.mask.as_ref().map(|m| mask_sites(&grid, m));
    let dump = a.dump_dir.as_ref().map(|d| resolve(d));
    if let Some(dir) = &dump {
        std::fs::create_dir_all(dir)?;
    }
    for index in a.start..a.start + a.samples {
        let (sample, restricted) = match &mask {
            Some(m) => {
                let (pa, pc, full) = sampler.sample_restricted(index, m)?;
                let harmonic = harmonicity_check(&pa, &abar, m).ok();
                let r = json!({ "inside": moments(&pa), "outside": moments(&pc), "harmonicity": harmonic, "sites_in_mask": m.iter().filter(|b| **b).count() });
                (full, Some(r))
            }
            None => (sampler.sample(index), None),
        };
        if let Some(dir) = &dump {
            std::fs::write(dir.join(format!("field_{index:06}.bin")), field_bytes(&sample))?;
        }
        let rec = json!({
            "index": index,
            "seed": a.seed,
            "field": moments(&sample.phi),
            "equation_residual": sampler.equation_residual(&sample),
            "restricted": restricted,
        });
        sink.record("gff_sample", rec)?;
    }
    Ok(())
}

fn markov_test(a: &MarkovArgs, sink: &mut Sink) -> Result<()> {
    let abar = spd(&a.abar, "abar").map_err(|e| hgff::Error::Domain(e.0))?;
    let q = spd(&a.q, "q").map_err(|e| hgff::Error::Domain(e.0))?;
    let u = HalfSpace::new(a.normal.0.clone(), a.offset)?;
    sink.record("markov", nonlocality_witness(&abar, &q, &u, a.tol)?)?;
    Ok(())
}

fn matrix_lemma(a: &MatrixArgs, sink: &mut Sink) -> Result<()> {
    let d = (a.matrix.0.len() as f64).sqrt().round() as usize;
    sink.record("matrix_lemma", quartic_divisibility(d, &a.matrix.0, a.tol)?)?;
    Ok(())
}

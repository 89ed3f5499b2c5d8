//! Experiment implementations behind the CLI subcommands.
//!
//! Every command reads its parameters from the config, runs the experiment
//! through the library, and writes CSV tables plus a JSON summary into the
//! output directory. Replica loops reduce in replica order so outputs do
//! not depend on thread scheduling.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context as AnyhowContext, Result};
use serde_json::{json, Value};

use fa1f_core::census;
use fa1f_core::contact;
use fa1f_core::dual;
use fa1f_core::dynamics::{self, Configuration, CylinderEvent, InitialLaw};
use fa1f_core::graph::{embed_half_line, GraphView, SiteId};
use fa1f_core::harris::HarrisScheme;
use fa1f_core::navigated;
use fa1f_core::oracle::FiniteChain;
use fa1f_core::renorm::{self, RenormParams};
use fa1f_core::rng::StreamRng;
use fa1f_core::stats::{self, FitPoint};

pub struct Context {
    pub config: crate::config::Config,
    pub seed: u64,
    pub replicas: usize,
    pub out: PathBuf,
}

impl Context {
    fn write_json(&self, name: &str, value: &Value) -> Result<()> {
        let path = self.out.join(name);
        let mut f = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(&mut f, value)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    fn csv_writer(&self, name: &str, header: &str) -> Result<BufWriter<File>> {
        let path = self.out.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "{header}")?;
        Ok(w)
    }

    fn site(&self, section: &str, key: &str, g: &GraphView) -> Result<SiteId> {
        let idx = self.config.usize(section, key)?;
        let site = SiteId::new(idx);
        if !g.contains(site) {
            bail!("[{section}] {key} = {idx} is outside the window of {} sites", g.len());
        }
        Ok(site)
    }

    fn initial_law(&self, section: &str, g: &GraphView) -> Result<InitialLaw> {
        match self.config.require(section, "law")? {
            "delta" => Ok(InitialLaw::Delta(self.site(section, "site", g)?)),
            "bernoulli" => Ok(InitialLaw::BernoulliConditioned(
                self.config.f64(section, "q")?,
            )),
            "ones" => Ok(InitialLaw::Explicit(Configuration::all_ones(g))),
            other => bail!("[{section}] law must be delta|bernoulli|ones, got `{other}`"),
        }
    }

    fn scheme(&self, g: &Arc<GraphView>, seed: u64) -> Result<Arc<HarrisScheme>> {
        let horizon = self.config.f64("scheme", "horizon")?;
        let q = self.config.f64("scheme", "q")?;
        Ok(Arc::new(HarrisScheme::sample(g.clone(), horizon, q, seed)?))
    }
}

pub fn sample_scheme(ctx: &Context) -> Result<()> {
    let g = Arc::new(ctx.config.graph()?);
    let scheme = ctx.scheme(&g, ctx.seed)?;
    let mut f = BufWriter::new(File::create(ctx.out.join("scheme.txt"))?);
    scheme.write_dump(&mut f)?;
    std::fs::write(ctx.out.join("graph.txt"), g.edge_list_text())?;
    ctx.write_json(
        "summary.json",
        &json!({
            "sites": g.len(),
            "kappa": g.kappa(),
            "horizon": scheme.horizon(),
            "q": scheme.q(),
            "seed": ctx.seed,
            "total_marks": scheme.total_marks(),
        }),
    )
}

pub fn evolve(ctx: &Context) -> Result<()> {
    let g = Arc::new(ctx.config.graph()?);
    let scheme = ctx.scheme(&g, ctx.seed)?;
    let law = ctx.initial_law("initial", &g)?;
    let init = dynamics::sample_initial(&law, &g, StreamRng::derive_seed(ctx.seed, 1));
    let tr = dynamics::evolve(&init, &scheme);
    let mut f = BufWriter::new(File::create(ctx.out.join("trajectory.txt"))?);
    tr.write_dump(&mut f)?;
    std::fs::write(
        ctx.out.join("final_state.txt"),
        format!("{}\n", tr.final_state().to_bit_string()),
    )?;
    ctx.write_json(
        "summary.json",
        &json!({
            "sites": g.len(),
            "flips": tr.flips().len(),
            "initial_occupied": init.occupied_count(),
            "final_occupied": tr.final_state().occupied_count(),
        }),
    )
}

pub fn couple(ctx: &Context) -> Result<()> {
    let g = Arc::new(ctx.config.graph()?);
    let scheme = ctx.scheme(&g, ctx.seed)?;
    let law1 = ctx.initial_law("initial", &g)?;
    let law2 = ctx.initial_law("initial2", &g)?;
    let ct = dynamics::couple(
        &law1,
        &law2,
        &scheme,
        StreamRng::derive_seed(ctx.seed, 1),
        StreamRng::derive_seed(ctx.seed, 2),
    );
    let mut f1 = BufWriter::new(File::create(ctx.out.join("trajectory_eta.txt"))?);
    ct.eta.write_dump(&mut f1)?;
    let mut f2 = BufWriter::new(File::create(ctx.out.join("trajectory_eta_tilde.txt"))?);
    ct.eta_tilde.write_dump(&mut f2)?;
    let t = scheme.horizon();
    let activated = g.sites().filter(|&x| ct.is_activated_at(x, t)).count();
    ctx.write_json(
        "summary.json",
        &json!({
            "sites": g.len(),
            "horizon": t,
            "activated_at_horizon": activated,
        }),
    )
}

pub fn dual_audit(ctx: &Context) -> Result<()> {
    let g = Arc::new(ctx.config.graph()?);
    let t = ctx.config.f64("dual", "t")?;
    let cutoff = ctx.config.f64("dual", "cutoff")?;
    let q = ctx.config.f64("scheme", "q")?;
    let x = ctx.site("dual", "x", &g)?;
    let cap = ctx.config.usize_or("dual", "cap", 1_000_000)?;
    let mut csv = ctx.csv_writer("audits.csv", "seed,t,tau,n_paths,max_value,truncated")?;
    let mut implication_violations = 0usize;
    let mut witness_failures = 0usize;
    let mut non_activated = 0usize;
    let mut truncated_runs = 0usize;
    for i in 0..ctx.replicas as u64 {
        let seed = StreamRng::derive_seed(ctx.seed, i);
        let scheme = Arc::new(HarrisScheme::sample(g.clone(), t, q, seed)?);
        let ct = dynamics::couple(
            &InitialLaw::Delta(SiteId::new(0)),
            &InitialLaw::BernoulliConditioned(q),
            &scheme,
            StreamRng::derive_seed(seed, 1),
            StreamRng::derive_seed(seed, 2),
        );
        let audit = dual::audit_activation(&ct, x, t, cutoff, cap)?;
        let census = dual::long_path_census(&scheme, x, t, cutoff, 0.0, cap)?;
        writeln!(
            csv,
            "{seed},{t},{cutoff},{},{},{}",
            audit.n_paths, census.max_value, audit.truncated
        )?;
        if audit.truncated {
            truncated_runs += 1;
            continue;
        }
        if audit.all_paths_activated && !audit.t_activated {
            implication_violations += 1;
        }
        if !audit.t_activated {
            non_activated += 1;
            match dual::find_non_activated_path(&ct, x, t, cutoff)? {
                Some(p) if p.validate(&scheme) && !dual::is_activated_path(&ct, &p) => {}
                _ => witness_failures += 1,
            }
        }
    }
    ctx.write_json(
        "summary.json",
        &json!({
            "replicas": ctx.replicas,
            "truncated_runs": truncated_runs,
            "non_activated_instances": non_activated,
            "implication_violations": implication_violations,
            "witness_failures": witness_failures,
        }),
    )
}

pub fn navigate_stats(ctx: &Context) -> Result<()> {
    let qs = ctx.config.f64_list("navigate", "q_grid")?;
    let ds = ctx.config.f64_list("navigate", "d_grid")?;
    let mut csv = ctx.csv_writer("hitting.csv", "q,d,replicas,mean,se,bound")?;
    let mut rows = Vec::new();
    for &q in &qs {
        for &d in &ds {
            let d = d as usize;
            let st = navigated::hitting_stats(
                q,
                d,
                ctx.replicas,
                StreamRng::derive_seed(ctx.seed, (d as u64) << 16 | (q * 1000.0) as u64),
            )?;
            writeln!(
                csv,
                "{q},{d},{},{},{},{}",
                st.replicas, st.mean, st.se, st.bound
            )?;
            rows.push(json!({
                "q": q, "d": d, "mean": st.mean, "se": st.se,
                "bound": st.bound, "absent": st.n_absent,
                "forced_detours": st.forced_detours,
            }));
        }
    }
    ctx.write_json("summary.json", &json!({ "rows": rows }))
}

pub fn contact_density(ctx: &Context) -> Result<()> {
    let q = ctx.config.f64("contact", "q")?;
    let reach = ctx.config.f64("contact", "reach")?;
    let horizon = ctx.config.f64("contact", "horizon")?;
    let threshold = ctx.config.f64("contact", "density_threshold")?;
    let block = ctx.config.usize("contact", "block")?;
    let alpha = ctx.config.f64("contact", "alpha")?;
    let report = contact::density_experiment(
        &InitialLaw::Delta(SiteId::new(0)),
        q,
        reach,
        horizon,
        threshold,
        block,
        alpha,
        ctx.replicas,
        ctx.seed,
    )?;
    let mut csv = ctx.csv_writer("density.csv", "q,L,t,rho,replicas,fail_prob,se")?;
    writeln!(
        csv,
        "{q},{reach},{horizon},{threshold},{},{},{}",
        report.replicas, report.fail_prob, report.se
    )?;
    ctx.write_json("blocks.json", &serde_json::to_value(&report)?)
}

pub fn renorm_tails(ctx: &Context) -> Result<()> {
    let block = ctx.config.f64("renorm", "block")?;
    let n_max = ctx.config.usize_or("renorm", "n_max", 8)?;
    let fit_lo = ctx.config.usize_or("renorm", "fit_lo", 2)?;
    let fit_hi = ctx.config.usize_or("renorm", "fit_hi", n_max)?;
    let death = renorm::death_tail(block, ctx.replicas, n_max, (fit_lo, fit_hi), ctx.seed)?;
    let mut csv = ctx.csv_writer("death_tail.csv", "K,n,p_hat,se,bound")?;
    for p in &death.curve {
        let bound = (-block / 4.0 * p.n as f64).exp();
        writeln!(csv, "{block},{},{},{},{bound}", p.n, p.p_hat, p.se)?;
    }

    let speed = ctx.config.f64_or("renorm", "speed", 0.5)?;
    let start = ctx.config.usize_or("renorm", "start", 0)?;
    let edge = renorm::right_edge_stats(
        block,
        speed,
        start,
        ctx.replicas,
        n_max,
        StreamRng::derive_seed(ctx.seed, 2),
    )?;
    let mut edge_csv = ctx.csv_writer("right_edge.csv", "K,beta,z,n,p_hat,se")?;
    for p in &edge.curve {
        writeln!(edge_csv, "{block},{speed},{start},{},{},{}", p.n, p.p_hat, p.se)?;
    }

    // a few restart chains on freshly classified fields, one JSON line each
    let n_chains = ctx.config.usize_or("renorm", "chains", 20)?;
    let q = renorm::density_for_block(block)?;
    let levels_wanted = 4 * (n_max + 2);
    let horizon = (levels_wanted + 3) as f64 * block / 2.0;
    let params = RenormParams::new(block, horizon)?;
    let g = Arc::new(fa1f_core::graph::build_window(
        fa1f_core::graph::WindowKind::HalfLine,
        n_max + 2,
    )?);
    let sites: Vec<SiteId> = g.sites().collect();
    let mut chains_file = BufWriter::new(File::create(ctx.out.join("chains.jsonl"))?);
    let mut survived = 0usize;
    for i in 0..n_chains as u64 {
        let scheme = HarrisScheme::sample(
            g.clone(),
            horizon,
            q,
            StreamRng::derive_seed(ctx.seed, 1000 + i),
        )?;
        let field = renorm::classify_intervals(&scheme, &sites, &params)?;
        let chain = renorm::subordinate_chain(&field, &sites, 0, 0, 16, n_max);
        if chain.outcome == renorm::ChainOutcome::Survived {
            survived += 1;
        }
        writeln!(chains_file, "{}", serde_json::to_string(&chain)?)?;
    }

    let occupancy = renorm::survivor_occupancy(
        block,
        ctx.replicas,
        n_max,
        StreamRng::derive_seed(ctx.seed, 3),
    )?;
    ctx.write_json(
        "summary.json",
        &json!({
            "block": block,
            "replicas": ctx.replicas,
            "death_slope": death.fitted_slope,
            "death_slope_range": [fit_lo, fit_hi],
            "deaths": death.deaths,
            "survivors": death.survivors,
            "right_edge_slope": edge.fitted_slope,
            "chains": n_chains,
            "chains_survived": survived,
            "survivor_occupancy": occupancy,
        }),
    )
}

pub fn oracle_decay(ctx: &Context) -> Result<()> {
    let g = Arc::new(ctx.config.graph()?);
    let q = ctx.config.f64("oracle", "q")?;
    let chain = FiniteChain::build(g.clone(), q)?;
    let y = ctx.site("oracle", "y", &g)?;
    let probe = ctx.site("oracle", "probe", &g)?;
    let grid = ctx.config.f64_list("oracle", "t_grid")?;
    let tol = ctx.config.f64_or("oracle", "tol", 1e-12)?;
    let event = CylinderEvent::site_occupied(probe);
    let curve = fa1f_core::oracle::exact_decay(&chain, y, &event, &grid, tol, 0.0)?;
    let mut csv = ctx.csv_writer("curve.csv", "t,exact_prob,stationary_prob,abs_diff")?;
    for p in &curve.points {
        writeln!(csv, "{},{},{},{}", p.t, p.exact_prob, p.stationary_prob, p.abs_diff)?;
    }
    ctx.write_json(
        "summary.json",
        &json!({
            "sites": g.len(),
            "q": q,
            "gap": curve.gap,
            "fit": curve.fit,
        }),
    )
}

pub fn encounter_census(ctx: &Context) -> Result<()> {
    let g = Arc::new(ctx.config.graph()?);
    let block = ctx.config.f64("census", "block")?;
    let horizon = ctx.config.f64("census", "horizon")?;
    let sigma = ctx.config.f64("census", "sigma")?;
    let cap = ctx.config.usize_or("census", "cap", 200_000)?;
    let x = ctx.site("census", "x", &g)?;
    let params = RenormParams::new(block, horizon)?;
    let hl = embed_half_line(&g, SiteId::new(0), g.len() - 1)?;
    let sites: Vec<SiteId> = g.sites().collect();
    let mut csv = ctx.csv_writer(
        "encounters.csv",
        "replica,path_index,site,level,touch_time,survives,agreement",
    )?;
    let mut n_paths = 0usize;
    let mut truncated = 0usize;
    let mut no_good = 0usize;
    let mut surviving = 0usize;
    let mut agreement = 0usize;
    for i in 0..ctx.replicas as u64 {
        let scheme = Arc::new(HarrisScheme::sample(
            g.clone(),
            horizon,
            params.q,
            StreamRng::derive_seed(ctx.seed, i),
        )?);
        let field = renorm::classify_intervals(&scheme, &sites, &params)?;
        let ct = dynamics::couple(
            &InitialLaw::Delta(SiteId::new(0)),
            &InitialLaw::BernoulliConditioned(params.q),
            &scheme,
            StreamRng::derive_seed(ctx.seed ^ 0xC1, i),
            StreamRng::derive_seed(ctx.seed ^ 0xC2, i),
        );
        let census = census::encounter_census(&ct, &field, &hl, x, sigma, cap)?;
        for r in &census.records {
            writeln!(
                csv,
                "{i},{},{},{},{},{},{}",
                r.path_index, r.site, r.level, r.touch_time, r.survives, r.agreement
            )?;
        }
        n_paths += census.summary.n_paths;
        truncated += usize::from(census.summary.truncated);
        no_good += census.summary.no_good_encounter;
        surviving += census.summary.surviving_encounters;
        agreement += census.summary.agreement_encounters;
    }
    let fail_fraction = (n_paths - surviving) as f64 / n_paths.max(1) as f64;
    ctx.write_json(
        "summary.json",
        &json!({
            "replicas": ctx.replicas,
            "paths": n_paths,
            "truncated_runs": truncated,
            "no_good_encounter": no_good,
            "surviving_encounters": surviving,
            "agreement_encounters": agreement,
            "fail_fraction": fail_fraction,
            // binomial over paths; failures cluster by scheme, so treat
            // this as a lower bound on the real uncertainty
            "fail_fraction_se": stats::binomial_se(fail_fraction, n_paths.max(1)),
        }),
    )
}

pub fn assembly(ctx: &Context) -> Result<()> {
    let g = Arc::new(ctx.config.graph()?);
    let q = ctx.config.f64("assembly", "q")?;
    let y = ctx.site("assembly", "y", &g)?;
    let x = ctx.site("assembly", "x", &g)?;
    let grid = ctx.config.f64_list("assembly", "t_grid")?;
    let sigma = ctx.config.f64_or("assembly", "sigma", 0.1)?;
    let margin_factor = ctx.config.f64_or("assembly", "margin_factor", 3.0)?;
    // optional wall-clock budget: horizons are dropped from the back once
    // the elapsed time would blow it, and the summary flags the truncation
    let budget = ctx.config.f64_or("run", "budget_seconds", f64::INFINITY)?;
    let started = std::time::Instant::now();
    let mut points = Vec::new();
    let mut fit_points = Vec::new();
    let mut truncated = false;
    let mut margin = None;
    for (idx, &t) in grid.iter().enumerate() {
        if idx > 0 && started.elapsed().as_secs_f64() > budget {
            truncated = true;
            break;
        }
        let partial = census::assembly_experiment(
            &g,
            y,
            x,
            q,
            &grid[idx..=idx],
            sigma,
            ctx.replicas,
            // margins are always checked against the full grid
            margin_factor * grid.iter().cloned().fold(0.0f64, f64::max) / t.max(1e-12),
            StreamRng::derive_seed(ctx.seed, idx as u64),
        )?;
        margin = Some((partial.margin, partial.margin_required));
        points.extend(partial.points);
    }
    let mut csv = ctx.csv_writer("decay.csv", "t,p_hat,se,failures,replicas")?;
    for p in &points {
        writeln!(csv, "{},{},{},{},{}", p.horizon, p.p_hat, p.se, p.failures, p.replicas)?;
        fit_points.push(FitPoint { x: p.horizon, estimate: p.p_hat, se: p.se });
    }
    let fit = stats::fit_exponential(&fit_points).ok();
    let (margin, margin_required) = margin.unwrap_or((0, 0));
    ctx.write_json(
        "summary.json",
        &json!({
            "q": q,
            "sigma": sigma,
            "replicas": ctx.replicas,
            "points": points,
            "fit": fit,
            "margin": margin,
            "margin_required": margin_required,
            "truncated": truncated,
        }),
    )
}

pub fn fit(ctx: &Context) -> Result<()> {
    let input = ctx
        .config
        .get("fit", "input")
        .ok_or_else(|| anyhow!("missing `input` in section [fit]"))?;
    let points = read_fit_csv(Path::new(input))?;
    let fit = stats::fit_exponential(&points)?;
    ctx.write_json("fit.json", &serde_json::to_value(&fit)?)
}

fn read_fit_csv(path: &Path) -> Result<Vec<FitPoint>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading fit input {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            continue; // header
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 3 {
            bail!("line {}: expected `x,estimate,se`", i + 1);
        }
        out.push(FitPoint {
            x: cols[0].trim().parse()?,
            estimate: cols[1].trim().parse()?,
            se: cols[2].trim().parse()?,
        });
    }
    Ok(out)
}

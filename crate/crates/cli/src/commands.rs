//! Command implementations behind the CLI surface.

use std::path::{Path, PathBuf};
use std::time::Instant;

use passlab::hjb::{
    bs_boundary_value, passport_grid, solve_passport_hjb, solve_symmetric_passport,
    symmetric_grid, PolicyMap,
};
use passlab::paths::{
    mc_estimate, simulate_account, simulate_classical_portfolio, simulate_gbm, simulate_index_state,
};
use passlab::pde::{SpaceTimeGrid, StorePolicy, ValueSurface};
use passlab::strategy::{IndexState, SymmetricStrategy};

use crate::config::{ConfigError, RunConfig};
use crate::io::{atomic_write, dump_from_surface, fmt, CsvWriter, SurfaceDump};
use crate::transform::{transform_surface, Direction};
use crate::verify::run_suite;

/// Process failure classification mapped to exit codes by main.
#[derive(Debug)]
pub enum CommandError {
    /// exit 2
    Config(String),
    /// exit 3
    Numerical(String),
}

impl From<ConfigError> for CommandError {
    fn from(e: ConfigError) -> Self {
        CommandError::Config(e.0)
    }
}

impl From<std::io::Error> for CommandError {
    fn from(e: std::io::Error) -> Self {
        CommandError::Config(format!("io error: {e}"))
    }
}

fn classify(e: passlab::Error) -> CommandError {
    match e {
        passlab::Error::Argument(m) => CommandError::Config(m),
        passlab::Error::Config(m) => CommandError::Config(m),
        passlab::Error::NotPsd(m) => CommandError::Config(format!("not PSD: {m}")),
        passlab::Error::Divergence { step, detail } => {
            CommandError::Numerical(format!("diverged at step {step}: {detail}"))
        }
        passlab::Error::StrategyInfeasible { step, detail } => {
            CommandError::Numerical(format!("strategy infeasible at step {step}: {detail}"))
        }
        passlab::Error::Numeric(m) => CommandError::Numerical(m),
    }
}

pub struct Artifacts {
    pub out_dir: PathBuf,
    pub config_hash: u64,
    pub seed: u64,
}

impl Artifacts {
    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn write_surface(&self, surface: &ValueSurface, stem: &str) -> std::io::Result<()> {
        let dump = dump_from_surface(surface);
        dump.write(&self.path(&format!("{stem}.bin")))?;
        dump.to_csv(self.config_hash, self.seed)
            .write(&self.path(&format!("{stem}.csv")))
    }

    fn write_policy(&self, policy: &PolicyMap, grid: &SpaceTimeGrid, stem: &str) -> std::io::Result<()> {
        let mut w = CsvWriter::new(self.config_hash, self.seed);
        let dim = grid.dim();
        let mut cols: Vec<String> = vec!["t".into()];
        cols.extend((0..dim).map(|d| format!("x{d}")));
        cols.extend((0..policy.n_controls).map(|c| format!("delta{c}")));
        w.row_mixed(&cols);
        for (lvl, &t) in policy.times.iter().enumerate() {
            for (flat, multi) in grid.iter_multi().enumerate() {
                let mut cells = vec![fmt(t)];
                for d in 0..dim {
                    cells.push(fmt(grid.coord(d, multi[d])));
                }
                for c in policy.control_at(lvl, flat) {
                    cells.push(fmt(*c));
                }
                w.row_mixed(&cells);
            }
        }
        w.write(&self.path(&format!("{stem}_policy.csv")))
    }

    fn write_summary(&self, rows: &[(&str, f64)]) -> std::io::Result<()> {
        let mut w = CsvWriter::new(self.config_hash, self.seed);
        w.row_mixed(&[String::from("key"), String::from("value")]);
        for (k, v) in rows {
            w.row_mixed(&[k.to_string(), fmt(*v)]);
        }
        w.write(&self.path("summary.csv"))
    }
}

pub fn prepare(cfg: &RunConfig, out_override: Option<&Path>) -> Result<Artifacts, CommandError> {
    let out_dir = match out_override {
        Some(p) => p.to_path_buf(),
        None => PathBuf::from(
            &cfg.output
                .as_ref()
                .ok_or_else(|| CommandError::Config("missing [output] section or --out".into()))?
                .dir,
        ),
    };
    std::fs::create_dir_all(&out_dir)?;
    Ok(Artifacts {
        out_dir,
        config_hash: cfg.hash(),
        seed: cfg.seed,
    })
}

pub fn cmd_price_passport(cfg: &RunConfig, art: &Artifacts) -> Result<(), CommandError> {
    cfg.check_command("price-passport")?;
    let model = cfg.require_market()?;
    if model.n > 3 {
        return Err(CommandError::Config("price-passport supports n <= 3".into()));
    }
    let grid_cfg = cfg.require_grid()?;
    if grid_cfg.nodes.len() != 2 {
        return Err(CommandError::Config(
            "grid.nodes must be [p_nodes, x_nodes] for price-passport".into(),
        ));
    }
    let strike = cfg.strike()?;
    let p0 = strike; // account starts at the strike by convention of the summary row
    let t0 = Instant::now();
    let grid = passport_grid(
        &model,
        strike,
        p0,
        grid_cfg.horizon,
        grid_cfg.nodes[0],
        grid_cfg.nodes[1],
    )
    .map_err(classify)?;
    let sol = solve_passport_hjb(&model, strike, &grid, StorePolicy::FinalOnly).map_err(classify)?;
    let runtime = t0.elapsed();

    let last = sol.surface.times.len() - 1;
    let mut spot_point = vec![p0];
    spot_point.extend(model.spot.iter().map(|s| s.ln()));
    let node = grid.nearest_node(&spot_point).map_err(classify)?;
    let value = sol.surface.values[last][grid.flat(&node)];

    art.write_surface(&sol.surface, "surface")?;
    art.write_policy(&sol.policy, &grid, "passport")?;
    art.write_summary(&[
        ("value_at_spot", value),
        ("strike", strike),
        ("horizon", grid_cfg.horizon),
        ("clamp_warning", if sol.clamp_warning { 1.0 } else { 0.0 }),
    ])?;
    println!(
        "price-passport: value={} clamp_warning={} runtime={:?}",
        fmt(value),
        sol.clamp_warning,
        runtime
    );
    Ok(())
}

pub fn cmd_price_symmetric(cfg: &RunConfig, art: &Artifacts) -> Result<(), CommandError> {
    cfg.check_command("price-symmetric")?;
    let model = cfg.require_market()?;
    if model.n != 1 {
        return Err(CommandError::Config(
            "price-symmetric prices one risky asset against the money account".into(),
        ));
    }
    let sigma = model.sigma[0];
    let grid_cfg = cfg.require_grid()?;
    if grid_cfg.nodes.len() != 2 {
        return Err(CommandError::Config(
            "grid.nodes must be [z1_nodes, z2_nodes] for price-symmetric".into(),
        ));
    }
    let (z1_lo, z2_lo, z2_hi) = match (grid_cfg.z1_lo, grid_cfg.z2_lo, grid_cfg.z2_hi) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => {
            return Err(CommandError::Config(
                "grid.z1_lo, grid.z2_lo, grid.z2_hi are required for price-symmetric".into(),
            ))
        }
    };
    let strike = cfg.strike()?;
    let t0 = Instant::now();
    let grid = symmetric_grid(
        z1_lo,
        z2_lo,
        z2_hi,
        grid_cfg.nodes[0],
        grid_cfg.nodes[1],
        grid_cfg.horizon,
        sigma,
    )
    .map_err(classify)?;
    let sol = solve_symmetric_passport(sigma, strike, &grid, StorePolicy::FinalOnly)
        .map_err(classify)?;
    let last = sol.surface.times.len() - 1;
    let node = grid.nearest_node(&[0.0, 0.0]).map_err(classify)?;
    let pde_value = sol.surface.values[last][grid.flat(&node)];

    let mc_cfg = cfg.require_mc(grid_cfg.horizon)?;
    let strat = SymmetricStrategy::stop_loss();
    let st0 = IndexState::new(1.0, 1.0).map_err(classify)?;
    let ens = simulate_account(sigma, &strat, &mc_cfg, &st0, None).map_err(classify)?;
    let (mc_value, stderr) =
        mc_estimate(&ens, |v| (v[1] - strike).max(0.0)).map_err(classify)?;
    let runtime = t0.elapsed();
    let diff_in_se = if stderr > 0.0 {
        (pde_value - mc_value).abs() / stderr
    } else {
        0.0
    };

    art.write_surface(&sol.surface, "surface")?;
    art.write_policy(&sol.policy, &grid, "symmetric")?;
    art.write_summary(&[
        ("pde_value", pde_value),
        ("mc_value", mc_value),
        ("mc_stderr", stderr),
        ("diff_in_stderr_units", diff_in_se),
        ("strike", strike),
        ("horizon", grid_cfg.horizon),
    ])?;
    println!(
        "price-symmetric: pde={} mc={} stderr={} diff/se={:.2} runtime={:?}",
        fmt(pde_value),
        fmt(mc_value),
        fmt(stderr),
        diff_in_se,
        runtime
    );
    Ok(())
}

pub fn cmd_verify(cfg: &RunConfig, art: &Artifacts) -> Result<bool, CommandError> {
    cfg.check_command("verify")?;
    let suite = cfg
        .verify
        .as_ref()
        .ok_or_else(|| CommandError::Config("missing [verify] section".into()))?
        .suite
        .clone();
    let t0 = Instant::now();
    let report = run_suite(&suite).map_err(CommandError::Config)?;
    let text = report.render(art.config_hash, art.seed);
    atomic_write(&art.path_report(&suite), text.as_bytes())?;
    if !report.greeks.is_empty() {
        crate::verify::greek_table_csv(&report.greeks, art.config_hash, art.seed)
            .write(&art.path("greeks.csv"))?;
    }
    for c in &report.checks {
        println!(
            "verify[{suite}] {}: {} (observed {}, tolerance {})",
            c.name,
            if c.pass { "pass" } else { "FAIL" },
            fmt(c.observed),
            fmt(c.tolerance)
        );
    }
    println!(
        "verify[{suite}]: {} in {:?}",
        if report.all_pass() { "ALL PASS" } else { "FAILED" },
        t0.elapsed()
    );
    Ok(report.all_pass())
}

impl Artifacts {
    fn path_report(&self, suite: &str) -> PathBuf {
        self.out_dir.join(format!("verify_{suite}.report"))
    }
}

pub fn cmd_transform(cfg: &RunConfig, art: &Artifacts) -> Result<(), CommandError> {
    cfg.check_command("transform")?;
    let section = cfg
        .transform
        .as_ref()
        .ok_or_else(|| CommandError::Config("missing [transform] section".into()))?;
    let dir = Direction::parse(&section.direction)
        .ok_or_else(|| CommandError::Config(format!("unknown direction '{}'", section.direction)))?;
    let dump = SurfaceDump::read(Path::new(&section.input))
        .map_err(|e| CommandError::Config(format!("cannot read surface dump: {e}")))?;
    let out = transform_surface(&dump, dir).map_err(CommandError::Config)?;
    out.write(&art.path("transformed.bin"))?;
    out.to_csv(art.config_hash, art.seed)
        .write(&art.path("transformed.csv"))?;
    println!(
        "transform: {} nodes, direction {}",
        out.total_nodes(),
        section.direction
    );
    Ok(())
}

pub fn cmd_simulate(cfg: &RunConfig, art: &Artifacts) -> Result<(), CommandError> {
    cfg.check_command("simulate")?;
    let section = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| CommandError::Config("missing [simulate] section".into()))?;
    let grid_cfg = cfg.require_grid()?;
    let mc_cfg = cfg.require_mc(grid_cfg.horizon)?;
    let n_checkpoints = cfg.mc.as_ref().map(|m| m.checkpoints).unwrap_or(8).max(1);
    let cps: Vec<usize> = (0..=n_checkpoints)
        .map(|i| i * mc_cfg.steps / n_checkpoints)
        .collect();
    let t0 = Instant::now();
    let (ens, var_names): (passlab::paths::PathEnsemble, Vec<String>) = match section
        .process
        .as_str()
    {
        "gbm" => {
            let model = cfg.require_market()?;
            let names = (0..model.n).map(|i| format!("s{i}")).collect();
            (
                simulate_gbm(&model, &mc_cfg, Some(&cps)).map_err(classify)?,
                names,
            )
        }
        "index" => {
            let model = cfg.require_market()?;
            let m0 = section.m0.unwrap_or(1.0);
            (
                simulate_index_state(model.sigma[0], &mc_cfg, m0, Some(&cps)).map_err(classify)?,
                vec!["m_n".into()],
            )
        }
        "account" => {
            let model = cfg.require_market()?;
            let st0 = IndexState::new(section.m0.unwrap_or(1.0), section.x0.unwrap_or(1.0))
                .map_err(classify)?;
            let strat = SymmetricStrategy::stop_loss();
            (
                simulate_account(model.sigma[0], &strat, &mc_cfg, &st0, Some(&cps))
                    .map_err(classify)?,
                vec!["m_n".into(), "x_n".into()],
            )
        }
        "portfolio" => {
            let model = cfg.require_market()?;
            let strat = passlab::strategy::ClassicalStrategy::constant(vec![1.0; model.n]);
            let mut names: Vec<String> = (0..model.n).map(|i| format!("s{i}")).collect();
            names.push("pi".into());
            (
                simulate_classical_portfolio(&model, &strat, &mc_cfg, 0.0, Some(&cps))
                    .map_err(classify)?,
                names,
            )
        }
        other => return Err(CommandError::Config(format!("unknown process '{other}'"))),
    };
    let runtime = t0.elapsed();

    // one row per path per checkpoint
    let mut w = CsvWriter::new(art.config_hash, art.seed);
    let mut cols: Vec<String> = vec!["path".into(), "checkpoint".into(), "t".into()];
    cols.extend(var_names);
    w.row_mixed(&cols);
    for p in 0..ens.paths {
        for (cp, &t) in ens.times.iter().enumerate() {
            let mut cells = vec![p.to_string(), cp.to_string(), fmt(t)];
            for v in ens.path_at(cp, p) {
                cells.push(fmt(*v));
            }
            w.row_mixed(&cells);
        }
    }
    w.write(&art.path("paths.csv"))?;
    let terminal = ens.terminal();
    let mean: f64 = terminal
        .chunks(ens.n_vars)
        .map(|row| row[0])
        .sum::<f64>()
        / ens.paths as f64;
    println!(
        "simulate[{}]: {} paths x {} checkpoints, terminal mean {} in {:?}",
        section.process,
        ens.paths,
        ens.times.len(),
        fmt(mean),
        runtime
    );
    Ok(())
}

/// Boundary column consistency used by price-symmetric tests: the emitted
/// surface's right edge equals the closed form at each stored time.
pub fn boundary_column_defect(surface_dump: &SurfaceDump, sigma: f64, strike: f64) -> f64 {
    let n2 = surface_dump.coords[1].len();
    let n1 = surface_dump.coords[0].len();
    let mut worst = 0.0f64;
    for (lvl, &tau) in surface_dump.times.iter().enumerate() {
        for i2 in 0..n2 {
            let z2 = surface_dump.coords[1][i2];
            let want = strike * bs_boundary_value(z2 - strike.ln(), tau, sigma);
            let got = surface_dump.values[lvl][(n1 - 1) * n2 + i2];
            worst = worst.max((got - want).abs());
        }
    }
    worst
}

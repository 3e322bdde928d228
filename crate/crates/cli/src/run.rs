//! Run orchestration: one mode per invocation.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dcf_core::coupled::{
    check_hypotheses, fixed_point_solve, CoupledOptions, DriftInputs, HypothesisOptions, RhsMode,
    Status, SystemCoefficients, Verdict,
};
use dcf_core::grid::{gradient, io, norms, ScalarField, VectorField};
use dcf_core::momentum::{estimate_c1, solve_lame, MomentumOptions, MomentumProblem};
use dcf_core::physical::{
    compare_forms, conformal_constant, constraint_residuals, map_parameters, reconstruct_data,
    MapOptions, PhysicalParams,
};
use dcf_core::scalar::{find_supersolution, monotone_iterate, LichCoefficients, MonotoneOptions};
use dcf_core::stability::{coercivity_eigenpair, coercivity_eigenvalue, linearize, smallest_eigenvalue, EigenOptions};
use dcf_core::verify::{bubble_residual, bubble_residual_with, manufacture_scalar, BUBBLE_POINTS};
use dcf_core::{scalar, Error};

use crate::config::{self, ConfigError, Mode, Resolved, RhsConfig};
use crate::report::{PhysicalSection, RunStatus, SolveReport, VerifySection};

pub const REPORT_FILE: &str = "report.json";
pub const DEFAULT_OUT_DIR: &str = "dcf-out";

/// Exit code for configuration errors.
pub const EXIT_CONFIG: i32 = 1;

/// Everything a finished run produced.
#[derive(Debug)]
pub struct Outcome {
    pub report: SolveReport,
    pub out_dir: PathBuf,
}

/// A dumpable result field.
#[derive(Debug, Clone)]
pub enum Dump {
    Scalar(ScalarField),
    Vector(VectorField),
    Tensor(dcf_core::grid::SymTensorField),
}

struct Run<'a> {
    cfg: &'a Resolved,
    seed: u64,
    report: SolveReport,
    dumps: Vec<(String, Dump)>,
}

/// Reads, validates and runs a config. Configuration problems are returned as
/// [`ConfigError`]; everything else produces a report.
pub fn run(
    mode: Mode,
    config_path: &Path,
    out: Option<&Path>,
    seed: Option<u64>,
) -> Result<Outcome, ConfigError> {
    let text = fs::read_to_string(config_path)
        .map_err(|e| ConfigError::new(config_path.display().to_string(), e.to_string()))?;
    let parsed = config::parse(&text)?;
    let resolved = config::resolve(parsed, mode)?;
    let out_dir = out
        .map(Path::to_path_buf)
        .or_else(|| resolved.config.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let Execution { report, dumps } = execute(&resolved, seed)?;
    let write_dumps = resolved.config.output.dumps.unwrap_or(true);
    let mut outcome = Outcome { report, out_dir };
    write_outputs(&mut outcome, &dumps, write_dumps)
        .map_err(|e| ConfigError::new(outcome.out_dir.display().to_string(), e.to_string()))?;
    Ok(outcome)
}

/// A report together with the fields it names.
#[derive(Debug)]
pub struct Execution {
    pub report: SolveReport,
    pub dumps: Vec<(String, Dump)>,
}

/// Runs a resolved config in memory without touching the file system.
pub fn execute(cfg: &Resolved, seed: Option<u64>) -> Result<Execution, ConfigError> {
    let start = Instant::now();
    let seed = cfg.seed(seed);
    let echo = serde_json::to_value(&cfg.config).expect("config serializes");
    let mut run = Run {
        cfg,
        seed,
        report: SolveReport::new(cfg.mode.name(), seed, echo),
        dumps: Vec::new(),
    };
    let result = match cfg.mode {
        Mode::SolveScalar => run.solve_scalar(),
        Mode::SolveMomentum => run.solve_momentum(),
        Mode::SolveCoupled => run.coupled(true),
        Mode::CheckHypotheses => run.coupled(false),
        Mode::Eigen => run.eigen(),
        Mode::Verify => run.verify(),
        Mode::MapPhysical => run.map_physical(),
    };
    match result {
        Ok(status) => run.report.set_status(status),
        Err(Failure::Config(e)) => return Err(e),
        Err(Failure::Solver(e)) => {
            run.report.error = Some(e.to_string());
            run.report.set_status(RunStatus::SolverFailure);
        }
    }
    for (name, dump) in &run.dumps {
        match dump {
            Dump::Scalar(s) => {
                run.report.norms.insert(name.clone(), norms(s));
            }
            Dump::Vector(v) => {
                for (i, c) in v.components().iter().enumerate() {
                    run.report.norms.insert(format!("{name}[{i}]"), norms(c));
                }
            }
            Dump::Tensor(_) => {}
        }
        run.report.dumps.push(format!("{name}.dcf"));
    }
    run.report.wall_time_seconds = start.elapsed().as_secs_f64();
    Ok(Execution {
        report: run.report,
        dumps: run.dumps,
    })
}

fn write_outputs(outcome: &mut Outcome, dumps: &[(String, Dump)], write_dumps: bool) -> std::io::Result<()> {
    fs::create_dir_all(&outcome.out_dir)?;
    if write_dumps {
        for (name, dump) in dumps {
            let path = outcome.out_dir.join(format!("{name}.dcf"));
            match dump {
                Dump::Scalar(s) => io::write_scalar(&path, s)?,
                Dump::Vector(v) => io::write_vector(&path, v)?,
                Dump::Tensor(t) => io::write_tensor(&path, t)?,
            }
        }
    } else {
        outcome.report.dumps.clear();
    }
    let json = serde_json::to_string_pretty(&outcome.report).expect("report serializes");
    fs::write(outcome.out_dir.join(REPORT_FILE), json + "\n")
}

enum Failure {
    Config(ConfigError),
    Solver(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Solver(e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

type Step = Result<RunStatus, Failure>;

fn verdict(name: &str, pass: bool, value: f64, threshold: f64, detail: impl Into<String>) -> Verdict {
    Verdict {
        name: name.to_string(),
        status: if pass { Status::Pass } else { Status::Fail },
        value,
        threshold,
        detail: detail.into(),
    }
}

fn advisory(name: &str, value: f64, threshold: f64, detail: impl Into<String>) -> Verdict {
    Verdict {
        name: name.to_string(),
        status: Status::Advisory,
        value,
        threshold,
        detail: detail.into(),
    }
}

fn gate(verdicts: &[Verdict]) -> Option<RunStatus> {
    verdicts
        .iter()
        .any(|v| v.status == Status::Fail)
        .then_some(RunStatus::HypothesisFail)
}

impl Run<'_> {
    fn eigen_options(&self) -> EigenOptions {
        let mut opts = EigenOptions::default();
        if let Some(t) = self.cfg.config.tolerances.eigen {
            opts.tol = t;
        }
        opts
    }

    fn monotone_options(&self) -> MonotoneOptions {
        let tol = &self.cfg.config.tolerances;
        let mut opts = MonotoneOptions::default();
        if let Some(t) = tol.scalar {
            opts.tol_outer = t;
        }
        if let Some(m) = tol.max_outer {
            opts.max_outer = m;
        }
        opts
    }

    fn momentum_options(&self) -> MomentumOptions {
        let mut opts = MomentumOptions::default();
        if let Some(t) = self.cfg.config.tolerances.momentum {
            opts.tol = t;
        }
        opts
    }

    fn coupled_options(&self) -> CoupledOptions {
        let tol = &self.cfg.config.tolerances;
        let mut opts = CoupledOptions {
            monotone: self.monotone_options(),
            momentum: self.momentum_options(),
            eigen: Some(self.eigen_options()),
            ..CoupledOptions::default()
        };
        if let Some(t) = tol.coupled_phi {
            opts.tol_phi = t;
        }
        if let Some(t) = tol.coupled_residual {
            opts.tol_residual = t;
        }
        if let Some(m) = tol.max_coupled {
            opts.max_outer = m;
        }
        opts
    }

    fn coercivity_verdict(&self, h: &ScalarField, name: &str) -> Verdict {
        match coercivity_eigenvalue(h, &self.eigen_options()) {
            Ok(l) => verdict(name, l > 0.0, l, 0.0, "first eigenvalue of Delta + h"),
            Err(e) => verdict(name, false, f64::NAN, 0.0, format!("eigen iteration failed: {e}")),
        }
    }

    fn lich(&self) -> Result<LichCoefficients, Failure> {
        let c = self.cfg;
        for name in ["f", "a"] {
            if !c.has_field(name) {
                return Err(ConfigError::new(format!("fields.{name}"), "required alongside fields.u").into());
            }
        }
        Ok(LichCoefficients {
            a: c.scalar_or("a", 0.0),
            b: c.scalar_or("b", 0.0),
            c: c.scalar_or("c", 0.0),
            d: c.scalar_or("d", 0.0),
            f: c.scalar_or("f", 0.0),
            h: c.scalar_or("h", 0.0),
            y: c.vector_or_zero("Y"),
        })
    }

    fn stability_at(&mut self, u: &ScalarField, coeffs: &LichCoefficients) {
        let pair = linearize(u, coeffs).and_then(|op| smallest_eigenvalue(&op, &self.eigen_options()));
        match pair {
            Ok(p) => {
                self.report.verdicts.push(advisory(
                    "stability",
                    p.lambda,
                    0.0,
                    "smallest eigenvalue of the linearization at the solution",
                ));
                self.report.eigen = Some(p.summary());
            }
            Err(e) => self.report.verdicts.push(advisory(
                "stability",
                f64::NAN,
                0.0,
                format!("eigen iteration failed: {e}"),
            )),
        }
    }

    fn solve_scalar(&mut self) -> Step {
        let coeffs = self.lich()?;
        let mut verdicts = vec![
            verdict("f positivity", coeffs.f.min() > 0.0, coeffs.f.min(), 0.0, "inf f > 0"),
            verdict("a positivity", coeffs.a.min() > 0.0, coeffs.a.min(), 0.0, "inf a > 0"),
        ];
        verdicts.push(self.coercivity_verdict(&coeffs.h, "coercivity"));
        self.report.verdicts = verdicts;
        if let Some(s) = gate(&self.report.verdicts) {
            return Ok(s);
        }
        coeffs.validate()?;
        let opts = self.monotone_options();
        let psi = match self.cfg.scalar("psi") {
            Some(psi) => psi,
            None => find_supersolution(&coeffs.f, &coeffs.h, &coeffs.a, &opts.inner)?,
        };
        let (u, trace) = monotone_iterate(&coeffs, &psi, &opts)?;
        self.report.monotone = Some(trace);
        self.stability_at(&u, &coeffs);
        self.dumps.push(("psi".into(), Dump::Scalar(psi)));
        self.dumps.push(("u".into(), Dump::Scalar(u)));
        Ok(RunStatus::Success)
    }

    fn solve_momentum(&mut self) -> Step {
        let c = self.cfg;
        let rho3 = c.scalar_or("rho3", 1.0);
        let x = c.vector("X").expect("X is required by resolve");
        let c1 = estimate_c1(&c.grid, self.seed);
        let grad = gradient(&rho3).sup_norm();
        let bound = grad * c1 / rho3.min();
        self.report.verdicts = vec![
            verdict("rho3 positivity", rho3.min() > 0.0, rho3.min(), 0.0, "inf rho3 > 0"),
            verdict(
                "rho3 gradient",
                bound < 1.0,
                bound,
                1.0,
                format!("sup|grad rho3| C1 / inf rho3 < 1 with measured C1 = {c1}"),
            ),
        ];
        if let Some(s) = gate(&self.report.verdicts) {
            return Ok(s);
        }
        let opts = MomentumOptions {
            c1: Some(c1),
            ..self.momentum_options()
        };
        let sol = solve_lame(&MomentumProblem::new(rho3, x)?, &opts)?;
        self.report.lame = Some(sol.trace);
        self.report.kernel = Some(sol.kernel);
        self.dumps.push(("W".into(), Dump::Vector(sol.w)));
        Ok(RunStatus::Success)
    }

    fn system(&self) -> Result<(SystemCoefficients, ScalarField), Failure> {
        let c = self.cfg;
        let drift_names = ["lapse", "pi", "matter_psi"];
        let rhs = match c.config.rhs.unwrap_or(RhsConfig::Zero) {
            RhsConfig::Zero => {
                if let Some(name) = drift_names.iter().find(|n| c.has_field(n)) {
                    return Err(ConfigError::new(format!("fields.{name}"), "used only with rhs = drift").into());
                }
                if c.vector("V").is_some() {
                    return Err(ConfigError::new("vectors.V", "used only with rhs = drift").into());
                }
                RhsMode::Zero
            }
            RhsConfig::Drift => RhsMode::Abstract(DriftInputs {
                v: c.vector_or_zero("V"),
                lapse: c.scalar_or("lapse", 1.0),
                pi: c.scalar_or("pi", 0.0),
                psi: c.scalar_or("matter_psi", 0.0),
            }),
        };
        let sys = SystemCoefficients {
            b: c.scalar_or("b", 0.0),
            c: c.scalar_or("c", 0.0),
            d: c.scalar_or("d", 0.0),
            f: c.scalar_or("f", 0.0),
            h: c.scalar_or("h", 0.0),
            rho1: c.scalar_or("rho1", 0.0),
            rho2: c.scalar_or("rho2", 0.0),
            rho3: c.scalar_or("rho3", 1.0),
            y: c.vector_or_zero("Y"),
            big_psi: c.tensor_or_zero("Psi"),
            rhs,
        };
        let a_tilde = self.a_tilde(&sys.rho1)?;
        Ok((sys, a_tilde))
    }

    fn a_tilde(&self, rho1: &ScalarField) -> Result<ScalarField, Failure> {
        let c = self.cfg;
        match (c.scalar("a_tilde"), c.config.omega) {
            (Some(_), Some(_)) => Err(ConfigError::new("omega", "give either fields.a_tilde or omega, not both").into()),
            (Some(a), None) => Ok(a),
            (None, Some(w)) => Ok(rho1.shift(w)),
            (None, None) => Err(ConfigError::new("fields.a_tilde", "required unless omega is given").into()),
        }
    }

    fn hypothesis_options(&self) -> HypothesisOptions {
        HypothesisOptions {
            c_n_config: self.cfg.config.c_n_config.unwrap_or(1.0),
            seed: self.seed,
            eigen: self.eigen_options(),
            ..HypothesisOptions::default()
        }
    }

    fn coupled(&mut self, solve: bool) -> Step {
        let (sys, a_tilde) = self.system()?;
        sys.validate()?;
        self.solve_system(&sys, &a_tilde, solve).map(|(s, _)| s)
    }

    fn solve_system(
        &mut self,
        sys: &SystemCoefficients,
        a_tilde: &ScalarField,
        solve: bool,
    ) -> Result<(RunStatus, Option<dcf_core::coupled::CoupledSolution>), Failure> {
        let hyp = check_hypotheses(sys, a_tilde, &self.hypothesis_options());
        self.report.verdicts.extend(hyp.verdicts.iter().cloned());
        let failed = !hyp.failures().is_empty();
        self.report.hypotheses = Some(hyp);
        if failed {
            return Ok((RunStatus::HypothesisFail, None));
        }
        if !solve {
            return Ok((RunStatus::Success, None));
        }
        let sol = fixed_point_solve(sys, a_tilde, &self.coupled_options())?;
        self.report.coupled = Some(sol.report.clone());
        self.dumps.push(("u".into(), Dump::Scalar(sol.u.clone())));
        self.dumps.push(("W".into(), Dump::Vector(sol.w.clone())));
        self.dumps.push(("Q".into(), Dump::Vector(sol.q.clone())));
        Ok((RunStatus::Success, Some(sol)))
    }

    fn eigen(&mut self) -> Step {
        let opts = self.eigen_options();
        let pair = match self.cfg.scalar("u") {
            Some(u) => {
                let coeffs = self.lich()?;
                coeffs.validate()?;
                smallest_eigenvalue(&linearize(&u, &coeffs)?, &opts)?
            }
            None => {
                if let Some(name) = ["f", "a", "b", "c", "d"].iter().find(|n| self.cfg.has_field(n)) {
                    return Err(ConfigError::new(format!("fields.{name}"), "used only together with fields.u").into());
                }
                if self.cfg.vector("Y").is_some() {
                    return Err(ConfigError::new("vectors.Y", "used only together with fields.u").into());
                }
                coercivity_eigenpair(&self.cfg.scalar_or("h", 0.0), &opts)?
            }
        };
        let summary = pair.summary();
        self.report.verdicts.push(verdict(
            "one-signed eigenfunction",
            summary.phi_min > 0.0 || summary.phi_max < 0.0,
            summary.phi_min,
            0.0,
            "the principal eigenfunction has constant sign",
        ));
        self.report.verdicts.push(advisory("lambda0", pair.lambda, 0.0, "principal eigenvalue"));
        self.report.eigen = Some(summary);
        self.dumps.push(("phi".into(), Dump::Scalar(pair.phi)));
        Ok(RunStatus::Success)
    }

    fn verify(&mut self) -> Step {
        let c = self.cfg;
        let n = c.grid.spec().dim;
        let f0 = c.constant("f0").unwrap_or(3.0);
        let r_max = c.constant("r_max").unwrap_or(10.0);
        let coarse = bubble_residual(f0, n, r_max);
        let fine = bubble_residual_with(f0, n, r_max, 2 * BUBBLE_POINTS - 1);
        let mut section = VerifySection {
            bubble_residual: coarse,
            bubble_residual_refined: fine,
            bubble_improvement: coarse / fine,
            manufactured_residual: None,
            manufactured_excess: None,
        };
        self.report
            .verdicts
            .push(verdict("bubble residual", coarse <= 1e-8, coarse, 1e-8, "relative residual of the bubble profile"));
        self.report.verdicts.push(verdict(
            "bubble convergence",
            coarse / fine >= 32.0,
            coarse / fine,
            32.0,
            "improvement from halving the radial step",
        ));
        if let Some(u_star) = c.scalar("u_star") {
            for name in ["h", "f", "a"] {
                if !c.has_field(name) {
                    return Err(ConfigError::new(format!("fields.{name}"), "required alongside fields.u_star").into());
                }
            }
            let mut coeffs = self.lich()?;
            coeffs.validate()?;
            coeffs.b = manufacture_scalar(&u_star, &coeffs)?;
            let opts = self.monotone_options();
            let (u, trace) = monotone_iterate(&coeffs, &u_star, &opts)?;
            let residual = scalar::scalar_residual(&u, &coeffs)?.sup_norm();
            let excess = (&u - &u_star).max();
            section.manufactured_residual = Some(residual);
            section.manufactured_excess = Some(excess);
            self.report.verdicts.push(verdict(
                "manufactured residual",
                residual <= 1e-9,
                residual,
                1e-9,
                "scalar residual of the recovered solution",
            ));
            self.report.verdicts.push(verdict(
                "manufactured ordering",
                excess <= 1e-9,
                excess,
                1e-9,
                "sup(u - u*): the minimal solution lies below u*",
            ));
            self.report.monotone = Some(trace);
            self.dumps.push(("u".into(), Dump::Scalar(u)));
        }
        self.report.verify = Some(section);
        Ok(if gate(&self.report.verdicts).is_some() {
            RunStatus::SolverFailure
        } else {
            RunStatus::Success
        })
    }

    fn map_physical(&mut self) -> Step {
        let c = self.cfg;
        let phys = PhysicalParams::new(
            c.tensor_or_zero("U"),
            c.constant("tau_star").expect("tau_star is required by resolve"),
            c.vector_or_zero("V"),
            c.scalar("matter_psi").expect("matter_psi is required by resolve"),
            c.scalar("pi").expect("pi is required by resolve"),
            c.scalar_or("lapse", 1.0),
            c.config.potential.clone().expect("potential is required by resolve"),
        )
        .map_err(|e| ConfigError::new("physical parameters", e.to_string()))?;
        let map = map_parameters(
            &phys,
            &MapOptions {
                seed: self.seed,
                eigen: self.eigen_options(),
            },
        )?;
        let mut sys = map.sys.clone();
        let h_phys = sys.h.clone();
        let override_h = c.scalar("h_override");
        let mut verdicts = map.verdicts.clone();
        if let Some(h) = &override_h {
            for v in verdicts.iter_mut().filter(|v| v.name == "coercivity") {
                v.status = Status::Advisory;
                v.detail = format!("{}; replaced by h_override", v.detail);
            }
            sys.h = h.clone();
        }
        self.report.verdicts = verdicts;
        let mut section = PhysicalSection {
            discrepancies: map.discrepancies.clone(),
            h_override: override_h.is_some(),
            h_override_term: f64::NAN,
            hamiltonian_residual: f64::NAN,
            momentum_residual: f64::NAN,
            tau_min: f64::NAN,
            tau_max: f64::NAN,
            q_coefficients: Vec::new(),
            term_comparison: Vec::new(),
        };
        if let Some(s) = gate(&self.report.verdicts) {
            self.report.physical = Some(section);
            return Ok(s);
        }
        let a_tilde = self.a_tilde(&sys.rho1)?;
        let result = self.solve_system(&sys, &a_tilde, true);
        let sol = match result {
            Ok((status, None)) => {
                self.report.physical = Some(section);
                return Ok(status);
            }
            Ok((_, Some(sol))) => sol,
            Err(e) => {
                self.report.physical = Some(section);
                return Err(e);
            }
        };
        let corrected = phys.with_drift(&phys.v + &sol.q);
        let data = reconstruct_data(&sol.u, &sol.w, &corrected)?;
        let (ham, mom) = constraint_residuals(&data, &corrected)?;
        let n = c.grid.spec().dim;
        let q = c.grid.spec().critical_exponent();
        let cn = conformal_constant(n);
        let h_term = (&h_phys - &sys.h)
            .zip_map(&sol.u, |dh, u| dh * u.powf(2.0 - q) / cn)
            .sup_norm();
        section.h_override_term = h_term;
        section.hamiltonian_residual = ham.sup_norm();
        section.momentum_residual = mom.max_abs_component();
        section.tau_min = data.tau.min();
        section.tau_max = data.tau.max();
        section.q_coefficients = sol.report.q_coefficients.clone();
        section.term_comparison = compare_forms(&phys, &map.sys, &sol.u, &sol.w)?;
        self.report.physical = Some(section);
        self.dumps.push(("K_hat".into(), Dump::Tensor(data.k_hat)));
        self.dumps.push(("tau".into(), Dump::Scalar(data.tau)));
        Ok(RunStatus::Success)
    }
}

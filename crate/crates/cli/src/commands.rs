use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use discval::calibration::{fit_platt, Calibrator, PlattOptions};
use discval::dataset::{read_csv, CsvOptions, EvalDataset, OutcomeSpec};
use discval::falsify::{
    emit_plot_data_with_header, run_multi_proxy, run_single_proxy, FalsificationConfig,
    FalsificationReport,
};
use discval::loss::build_loss_matrix;
use discval::metrics::{metric_table, Predictions, DEFAULT_K_ADMISSIONS};
use discval::mht::{execute_plan, Decision, Hypothesis, TestPlan};
use discval::seeds::derive_seed;
use discval::sim::{
    ablation_run, generate, generate_unsplit, power_experiment, type1_experiment, write_ablation_csv, Experiment,
};

use crate::config::{read_toml, FileConfig, Knobs, OnOff, PlanFile, SimKind, SimulateFile};
use crate::error::{core, CliError};
use crate::manifest::{out_dir, timestamp, write_csv_with_header, write_file, write_json, RunManifest};
use crate::{CommonArgs, MetricsArgs, MultiArgs, PlanArgs, SimulateArgs, SingleArgs, TestArgs};

/// Relative paths inside a file are taken relative to that file.
fn relative_to(file: &Path, p: PathBuf) -> PathBuf {
    if p.is_relative() {
        file.parent().map_or(p.clone(), |dir| dir.join(&p))
    } else {
        p
    }
}

fn load_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let (mut cfg, _): (FileConfig, _) = read_toml(path)?;
    cfg.data = cfg.data.map(|d| relative_to(path, d));
    cfg.out = cfg.out.map(|d| relative_to(path, d));
    Ok(cfg)
}

fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> u64 {
    flag.or(file).unwrap_or_else(|| {
        let seed = rand::random::<u64>() >> 11;
        eprintln!("seed: {seed} (drawn; pass --seed {seed} to reproduce)");
        seed
    })
}

/// Everything that determines the data a test sees, apart from the file bytes.
#[derive(Debug, Clone, Serialize)]
struct DataSettings {
    score_col: String,
    role_col: Option<String>,
    cal_fraction: f64,
    true_tokens: Vec<String>,
    false_tokens: Vec<String>,
}

impl DataSettings {
    fn resolve(common: &CommonArgs, file: &FileConfig) -> Self {
        let defaults = CsvOptions::default();
        DataSettings {
            score_col: common
                .score_col
                .clone()
                .or_else(|| file.score_col.clone())
                .unwrap_or_else(|| "score".into()),
            role_col: common.role_col.clone().or_else(|| file.role_col.clone()),
            cal_fraction: common.cal_fraction.or(file.cal_fraction).unwrap_or(0.5),
            true_tokens: file.true_tokens.clone().unwrap_or(defaults.true_tokens),
            false_tokens: file.false_tokens.clone().unwrap_or(defaults.false_tokens),
        }
    }

    /// Reads the CSV; when `split` is set and no role column is given, splits at random.
    fn load(
        &self,
        path: &Path,
        outcomes: &[OutcomeSpec],
        seed: u64,
        split: bool,
    ) -> Result<(EvalDataset, Vec<u8>), CliError> {
        let bytes = std::fs::read(path).map_err(|source| CliError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let options = CsvOptions {
            true_tokens: self.true_tokens.clone(),
            false_tokens: self.false_tokens.clone(),
            role_column: self.role_col.clone(),
        };
        let mut ds = read_csv(bytes.as_slice(), &self.score_col, outcomes, &options).map_err(core)?;
        if split && self.role_col.is_none() {
            ds = ds
                .split(self.cal_fraction, derive_seed(seed, "split", 0))
                .map_err(core)?;
        }
        Ok((ds, bytes))
    }
}

/// Plain decimals down to 1e-4, scientific notation below.
fn fmt_p(p: f64) -> String {
    if p == 0.0 || p >= 1e-4 {
        format!("{p}")
    } else {
        format!("{p:.4e}")
    }
}

fn require<T>(value: Option<T>, flag: &str) -> Result<T, CliError> {
    value.ok_or_else(|| {
        CliError::Usage(format!(
            "the following required argument was not provided: --{flag} (or `{}` in --config)",
            flag.replace('-', "_")
        ))
    })
}

fn test_knobs(test: &TestArgs) -> Knobs {
    Knobs {
        alpha: test.alpha,
        loss: test.loss,
        calibrate: test.calibrate,
        ..Default::default()
    }
}

#[derive(Debug, Serialize)]
struct FalsifyRun {
    data: DataSettings,
    impermissible: String,
    permissibles: Vec<String>,
    config: FalsificationConfig,
}

struct Prepared {
    run: FalsifyRun,
    dataset: EvalDataset,
    manifest: RunManifest,
    out: PathBuf,
    export_losses: bool,
}

fn prepare(
    command: &str,
    common: &CommonArgs,
    test: &TestArgs,
    flag_knobs: Knobs,
    permissibles: Vec<String>,
    impermissible: Option<String>,
) -> Result<Prepared, CliError> {
    let file = load_config(common.config.as_deref())?;
    let data_path = require(common.data.clone().or_else(|| file.data.clone()), "data")?;
    let permissibles = if permissibles.is_empty() {
        file.permissible.clone().map(|n| n.into_vec()).unwrap_or_default()
    } else {
        permissibles
    };
    if permissibles.is_empty() {
        return Err(CliError::Usage(
            "at least one --permissible outcome is required".into(),
        ));
    }
    let impermissible = match impermissible {
        Some(i) => i,
        None => {
            let from_file = file.impermissible.clone().map(|n| n.into_vec());
            match from_file.as_deref() {
                Some([one]) => one.clone(),
                Some(_) => {
                    return Err(CliError::Config(
                        "`impermissible` must name exactly one outcome for this command".into(),
                    ))
                }
                None => require(None, "impermissible")?,
            }
        }
    };
    let seed = resolve_seed(common.seed, file.seed);
    let data = DataSettings::resolve(common, &file);
    let mut config = flag_knobs.or(&file.knobs()).apply(FalsificationConfig::default());
    config.seed = seed;
    config.threads = common.threads.or(file.threads);
    config.validate().map_err(core)?;

    let mut outcomes: Vec<OutcomeSpec> = permissibles.iter().map(OutcomeSpec::permissible).collect();
    outcomes.push(OutcomeSpec::impermissible(impermissible.clone()));
    let (dataset, bytes) = data.load(&data_path, &outcomes, seed, true)?;
    let run = FalsifyRun {
        data,
        impermissible,
        permissibles,
        config,
    };
    let manifest = RunManifest::new(command, &run, &bytes, seed, timestamp(common.timestamp.clone()));
    Ok(Prepared {
        run,
        dataset,
        manifest,
        out: out_dir(common.out.clone(), file.out.clone()),
        export_losses: test.export_losses || file.export_losses.unwrap_or(false),
    })
}

fn finish_falsify(p: &Prepared, report: &FalsificationReport) -> Result<(), CliError> {
    let report_path = p.out.join("report.json");
    write_json(&report_path, &p.manifest, report)?;
    let plots = emit_plot_data_with_header(report, &p.out, Some(&p.manifest.csv_header()))
        .map_err(core)?;
    if p.export_losses {
        let calibrations: BTreeMap<String, Calibrator> = report
            .calibrations
            .iter()
            .map(|c| (c.outcome.clone(), c.calibrator.clone()))
            .collect();
        let matrix = build_loss_matrix(
            &p.dataset,
            &p.run.impermissible,
            &p.run.permissibles,
            &calibrations,
            p.run.config.loss_kind,
        )
        .map_err(core)?;
        write_csv_with_header(&p.out.join("losses.csv"), &p.manifest, |buf| {
            matrix.write_csv(buf).map_err(|e| e.to_string())
        })?;
    }
    println!("{}", report.verdict_label);
    println!(
        "p = {} ({:?}, n = {}, alpha = {})",
        fmt_p(report.test.p_value), report.test.method, report.n, report.alpha
    );
    println!("report: {}", report_path.display());
    for path in plots {
        println!("plot data: {}", path.display());
    }
    Ok(())
}

pub fn falsify_single(args: SingleArgs) -> Result<(), CliError> {
    let knobs = Knobs {
        mode: args.mode,
        wilcoxon: args.wilcoxon,
        ..test_knobs(&args.test)
    };
    let p = prepare(
        "falsify-single",
        &args.common,
        &args.test,
        knobs,
        args.permissible.into_iter().collect(),
        args.impermissible,
    )?;
    if p.run.permissibles.len() != 1 {
        return Err(CliError::Usage(format!(
            "falsify-single takes exactly one permissible outcome, got {}",
            p.run.permissibles.len()
        )));
    }
    let report = run_single_proxy(&p.dataset, &p.run.permissibles[0], &p.run.impermissible, &p.run.config)
        .map_err(core)?;
    finish_falsify(&p, &report)
}

pub fn falsify_multi(args: MultiArgs) -> Result<(), CliError> {
    let knobs = Knobs {
        multi_mode: args.multi_mode,
        permutations: args.permutations,
        ..test_knobs(&args.test)
    };
    let p = prepare(
        "falsify-multi",
        &args.common,
        &args.test,
        knobs,
        args.permissible,
        args.impermissible,
    )?;
    let report = run_multi_proxy(&p.dataset, &p.run.permissibles, &p.run.impermissible, &p.run.config)
        .map_err(core)?;
    finish_falsify(&p, &report)
}

#[derive(Debug, Serialize)]
struct MetricsRun {
    data: DataSettings,
    outcomes: Vec<OutcomeSpec>,
    k: Vec<f64>,
    calibrate: bool,
    platt: PlattOptions,
}

pub fn metrics(args: MetricsArgs) -> Result<(), CliError> {
    let common = &args.common;
    let file = load_config(common.config.as_deref())?;
    let data_path = require(common.data.clone().or_else(|| file.data.clone()), "data")?;
    let pick = |flags: &[String], from_file: &Option<crate::config::Names>| {
        if flags.is_empty() {
            from_file.clone().map(|n| n.into_vec()).unwrap_or_default()
        } else {
            flags.to_vec()
        }
    };
    let perms = pick(&args.permissible, &file.permissible);
    let imps = pick(&args.impermissible, &file.impermissible);
    let mut outcomes: Vec<OutcomeSpec> = perms.iter().map(OutcomeSpec::permissible).collect();
    outcomes.extend(imps.iter().map(OutcomeSpec::impermissible));
    if outcomes.is_empty() {
        return Err(CliError::Usage(
            "name at least one outcome with --permissible or --impermissible".into(),
        ));
    }
    let k = if !args.k.is_empty() {
        args.k.clone()
    } else {
        file.k.clone().unwrap_or_else(|| DEFAULT_K_ADMISSIONS.to_vec())
    };
    let calibrate = args.calibrate.or(file.calibrate).is_none_or(OnOff::is_on);
    let seed = resolve_seed(common.seed, file.seed);
    let data = DataSettings::resolve(common, &file);
    let (dataset, bytes) = data.load(&data_path, &outcomes, seed, calibrate)?;

    let predictions = if calibrate {
        let cal_idx = dataset.calibration_indices().map_err(core)?;
        let mut map = BTreeMap::new();
        for (j, o) in dataset.outcomes().iter().enumerate() {
            let (s, y) = dataset.column(j, &cal_idx);
            let params = fit_platt(&o.name, &s, &y, &PlattOptions::default()).map_err(core)?;
            map.insert(o.name.clone(), Calibrator::Platt(params));
        }
        Predictions::Calibrated(map)
    } else {
        Predictions::Raw
    };
    let table = metric_table(&dataset, &predictions, &k).map_err(core)?;

    let run = MetricsRun {
        data,
        outcomes,
        k,
        calibrate,
        platt: PlattOptions::default(),
    };
    let manifest = RunManifest::new("metrics", &run, &bytes, seed, timestamp(common.timestamp.clone()));
    let out = out_dir(common.out.clone(), file.out.clone());
    write_json(&out.join("metrics.json"), &manifest, &table)?;
    write_csv_with_header(&out.join("metrics.csv"), &manifest, |buf| {
        table.write_csv(buf).map_err(|e| e.to_string())
    })?;
    let text = table.to_text();
    write_file(
        &out.join("metrics.txt"),
        format!("# {}\n{text}", manifest.csv_header()).as_bytes(),
    )?;
    print!("{text}");
    if !text.ends_with('\n') {
        println!();
    }
    println!("metrics: {}", out.join("metrics.csv").display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct PlanRun<'a> {
    data: &'a DataSettings,
    plan: &'a TestPlan,
}

#[derive(Debug, Serialize)]
struct PlanOutput<'a> {
    #[serde(flatten)]
    execution: &'a discval::mht::PlanExecution,
}

pub fn plan(args: PlanArgs) -> Result<(), CliError> {
    let (file, _): (PlanFile, _) = read_toml(&args.plan)?;
    if file.hypotheses.is_empty() {
        return Err(CliError::Config("`hypothesis`: the plan declares no hypotheses".into()));
    }
    let seed = resolve_seed(args.seed, file.seed);
    let tokens = CsvOptions::default();
    let data = DataSettings {
        score_col: file.score_col.clone(),
        role_col: file.role_col.clone(),
        cal_fraction: file.cal_fraction.unwrap_or(0.5),
        true_tokens: tokens.true_tokens,
        false_tokens: tokens.false_tokens,
    };

    // Any outcome tested as impermissible somewhere is declared impermissible.
    let mut outcomes: Vec<OutcomeSpec> = Vec::new();
    for h in &file.hypotheses {
        if !outcomes.iter().any(|o| o.name == h.impermissible) {
            outcomes.push(OutcomeSpec::impermissible(h.impermissible.clone()));
        }
    }
    for h in &file.hypotheses {
        for p in h.permissible.clone().into_vec() {
            if !outcomes.iter().any(|o| o.name == p) {
                outcomes.push(OutcomeSpec::permissible(p));
            }
        }
    }
    let hypotheses: Vec<Hypothesis> = file
        .hypotheses
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let mut config = h.knobs().or(&file.defaults).apply(FalsificationConfig::default());
            config.alpha = file.alpha;
            config.seed = derive_seed(seed, "hypothesis", i as u64);
            config.threads = args.threads;
            Hypothesis {
                label: h.label.clone(),
                impermissible: h.impermissible.clone(),
                permissibles: h.permissible.clone().into_vec(),
                config,
                p_value: h.p_value,
            }
        })
        .collect();
    for h in &hypotheses {
        h.config
            .validate()
            .map_err(|e| CliError::Config(format!("hypothesis `{}`: {e}", h.label)))?;
    }
    let plan = TestPlan::new(file.alpha, file.policy, hypotheses).map_err(core)?;
    let data_path = relative_to(&args.plan, file.data.clone());
    let (dataset, bytes) = data.load(&data_path, &outcomes, seed, true)?;
    let execution = execute_plan(&plan, &dataset).map_err(core)?;

    let manifest = RunManifest::new(
        "plan",
        &PlanRun { data: &data, plan: &plan },
        &bytes,
        seed,
        timestamp(args.timestamp.clone()),
    );
    let out = out_dir(args.out.clone(), None);
    write_json(&out.join("plan.json"), &manifest, &PlanOutput { execution: &execution })?;
    write_csv_with_header(&out.join("plan.csv"), &manifest, |buf| {
        use std::io::Write;
        let mut w = || -> std::io::Result<()> {
            writeln!(buf, "label,p_value,threshold,decision,stage")?;
            for h in &execution.result.hypotheses {
                writeln!(buf, "{},{},{},{:?},{:?}", h.label, h.p_value, h.threshold, h.decision, h.stage)?;
            }
            Ok(())
        };
        w().map_err(|e| e.to_string())
    })?;
    for h in &execution.result.hypotheses {
        let decision = match h.decision {
            Decision::Reject => "DISCRIMINANT",
            Decision::Fail => "INDISCRIMINANT (inconclusive)",
        };
        println!(
            "{}: p = {}, threshold = {} ({:?}) -> {decision}",
            h.label,
            fmt_p(h.p_value), h.threshold, h.stage
        );
    }
    println!("plan: {}", out.join("plan.json").display());
    Ok(())
}

pub fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let (mut file, bytes): (SimulateFile, _) = read_toml(&args.spec)?;
    if let Some(seed) = args.seed {
        file.spec.seed = seed;
    }
    if let Some(t) = args.trials {
        file.trials = Some(t);
    }
    file.config.threads = args.threads;
    let seed = file.spec.seed;
    let manifest = RunManifest::new("simulate", &file, &bytes, seed, timestamp(args.timestamp.clone()));
    let out = out_dir(args.out.clone(), None);

    if file.kind == SimKind::Dataset {
        let ds = generate_unsplit(&file.spec).map_err(core)?;
        let path = out.join("data.csv");
        write_csv_with_header(&path, &manifest, |buf| {
            ds.write_csv(buf, "score").map_err(|e| e.to_string())
        })?;
        println!("dataset: {} ({} records)", path.display(), ds.len());
        return Ok(());
    }
    if file.kind == SimKind::Ablation {
        let ds = generate(&file.spec).map_err(core)?;
        let rows = ablation_run(&ds, &file.impermissible, &file.permissibles, &file.config).map_err(core)?;
        write_json(&out.join("ablation.json"), &manifest, &serde_json::json!({ "rows": rows }))?;
        write_csv_with_header(&out.join("ablation.csv"), &manifest, |buf| {
            write_ablation_csv(&rows, buf).map_err(|e| e.to_string())
        })?;
        for r in &rows {
            println!(
                "calibrate={} loss={:?}: statistic = {}, p = {}, {}",
                r.calibrate,
                r.loss_kind,
                r.statistic,
                fmt_p(r.p_value),
                r.verdict.label()
            );
        }
        println!("ablation: {}", out.join("ablation.csv").display());
        return Ok(());
    }

    let experiment = Experiment {
        spec: file.spec.clone(),
        procedure: require_field(file.procedure, "procedure")?,
        impermissible: file.impermissible.clone(),
        permissibles: file.permissibles.clone(),
        trials: require_field(file.trials, "trials")?,
        alpha: file.alpha.unwrap_or(0.05),
        calibration: file.calibration,
        config: file.config.clone(),
    };
    let result = match file.kind {
        SimKind::Type1 => type1_experiment(&experiment),
        _ => power_experiment(&experiment),
    }
    .map_err(core)?;
    write_json(&out.join("simulation.json"), &manifest, &result)?;
    write_csv_with_header(&out.join("trials.csv"), &manifest, |buf| {
        result.write_csv(buf).map_err(|e| e.to_string())
    })?;
    println!(
        "{}: {} of {} completed trials rejected (rate {:.4}, alpha {}, Type-I band upper edge {:.4})",
        result.kind,
        result.rejections,
        result.completed,
        result.rejection_rate,
        result.alpha,
        result.type1_upper_band
    );
    println!("simulation: {}", out.join("simulation.json").display());
    Ok(())
}

fn require_field<T>(value: Option<T>, field: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Config(format!("`{field}` is required for this kind of simulation")))
}

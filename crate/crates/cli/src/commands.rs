use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use shtrans_core::dataset::{generate_split, make_example, read_shard, write_shard, DatasetConfig, Shard, Split, TrainingExample};
use shtrans_core::field::SceneFile;
use shtrans_core::metrics::{evaluate_suite, field_grid, summarize, EvalReport, SuiteGroup};
use shtrans_core::{Error, GridSpec, Result, ShCoeffSet};
use shtrans_nn::{ModelConfig, PreparedExample, TrainConfig, Trainer, TtNet};

use crate::args::{EvalArgs, GenDataArgs, LsmArgs, Method, RenderArgs, RenderMethod, TrainArgs};
use crate::manifest::{read_json, with_path, ManifestBuilder, RunManifest};
use crate::methods::{check_compatible, load_checkpoint_model, lsm_estimate, sweep_config, TrainingGrid, GRID_FILE};

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| with_path(e, path))?))
}

fn load_shard(path: &Path) -> Result<Shard> {
    read_shard(path).map_err(|e| match e {
        Error::Io(io) => with_path(io, path),
        other => other,
    })
}

fn write_report(m: &mut ManifestBuilder, report: &EvalReport, groups: &[SuiteGroup]) -> Result<()> {
    let mut w = create(&m.output("report.csv"))?;
    report.write_csv(&mut w)?;
    w.flush()?;
    let summary = serde_json::json!({ "groups": summarize(report, groups) });
    fs::write(m.output("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(())
}

/// Groups with no items carry no metrics and are left out of reports.
fn evaluate(groups: Vec<SuiteGroup>, region: GridSpec) -> Result<(EvalReport, Vec<SuiteGroup>)> {
    let groups: Vec<SuiteGroup> = groups.into_iter().filter(|g| !g.references.is_empty()).collect();
    Ok((evaluate_suite(&groups, region)?, groups))
}

pub fn gen_data(args: &GenDataArgs) -> Result<RunManifest> {
    let mut cfg = args.data.resolve()?;
    if let Some(n) = args.count {
        cfg.train_count = n;
        cfg.val_count = n;
        cfg.test_count = n;
    }
    let mut m = ManifestBuilder::new("gen-data", &args.out, &cfg)?;
    m.seed("dataset", cfg.seed);
    if let Some(p) = &args.data.config {
        m.input(p)?;
    }
    for split in Split::ALL {
        let examples = generate_split(&cfg, split)?;
        let path = m.output(&format!("{}.shard", split.name()));
        write_shard(&examples, &cfg, &path).map_err(|e| match e {
            Error::Io(io) => with_path(io, &path),
            other => other,
        })?;
        eprintln!("{}: {} examples", path.display(), examples.len());
    }
    m.finish()
}

#[derive(Serialize)]
struct LsmRun<'a> {
    ridge: Vec<shtrans_core::RidgeConfig>,
    region: GridSpec,
    n_in: u32,
    n_out: u32,
    estimates_layout: &'a str,
}

pub fn lsm(args: &LsmArgs) -> Result<RunManifest> {
    let shard = load_shard(&args.shard)?;
    let h = &shard.header;
    let (want_in, want_out) = (args.n_in.unwrap_or(h.n_in), args.n_out.unwrap_or(h.n_out));
    if (want_in, want_out) != (h.n_in, h.n_out) {
        return Err(Error::ShapeMismatch(format!(
            "shard holds orders {}→{}, requested {want_in}→{want_out}",
            h.n_in, h.n_out
        )));
    }
    let ridges = args.ridge.configs()?;
    let region = args.region.spec();
    let run = LsmRun {
        ridge: ridges.clone(),
        region,
        n_in: h.n_in,
        n_out: h.n_out,
        estimates_layout: "per lambda, per example: K x (n_out+1)^2 complex, row-major, f64 LE re/im pairs, normalised units",
    };
    let mut m = ManifestBuilder::new("lsm", &args.out, &run)?;
    m.input(&args.shard)?;

    let mut cond = create(&m.output("condition.csv"))?;
    writeln!(cond, "lambda_setting,example,freq_hz,cond,residual,lambda,warning")?;
    let mut est_out = create(&m.output("estimates.bin"))?;
    let mut groups = Vec::new();
    for ridge in &ridges {
        let mut estimates = Vec::with_capacity(shard.examples.len());
        for (i, ex) in shard.examples.iter().enumerate() {
            let sol = lsm_estimate(ex, *ridge)?;
            for d in &sol.diagnostics {
                let warning = d.warning.as_deref().unwrap_or("").replace(',', ";");
                writeln!(
                    cond,
                    "{},{i},{},{:e},{:e},{:e},{warning}",
                    ridge.lambda, d.freq_hz, d.cond, d.residual, d.lambda
                )?;
            }
            for z in &sol.coeffs.data {
                est_out.write_all(&z.re.to_le_bytes())?;
                est_out.write_all(&z.im.to_le_bytes())?;
            }
            estimates.push(sol.coeffs);
        }
        groups.push(SuiteGroup {
            method: "lsm".into(),
            sweep_axis: "lambda".into(),
            sweep_value: format!("{}", ridge.lambda),
            estimates,
            references: shard.examples.iter().map(|e| e.target.clone()).collect(),
        });
    }
    cond.flush()?;
    est_out.flush()?;
    drop((cond, est_out));
    let (report, groups) = evaluate(groups, region)?;
    for r in report.averages() {
        eprintln!("lambda {}: EDM {:.4e}  COSS {:.4}  SDR {:.2} dB", r.sweep_value, r.edm, r.coss, r.sdr_db);
    }
    write_report(&mut m, &report, &groups)?;
    m.finish()
}

#[derive(Serialize)]
struct TrainRun {
    model: ModelConfig,
    train: TrainConfig,
    init_seed: u64,
    resumed_from_epoch: Option<usize>,
    stop_after_epochs: Option<usize>,
}

fn resolve_train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = match &args.train_config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    macro_rules! apply {
        ($($f:ident),*) => { $( if let Some(v) = args.$f { cfg.$f = v; } )* };
    }
    apply!(epochs_per_stage, batch_size, lr, clip, plateau_patience, seed);
    if args.max_steps.is_some() {
        cfg.max_steps = args.max_steps;
    }
    if let Some(c) = args.curriculum {
        cfg.curriculum = c.into();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(args: &TrainArgs) -> Result<RunManifest> {
    let train_shard = load_shard(&args.train)?;
    let h = &train_shard.header;
    let val_shard = args.val.as_deref().map(load_shard).transpose()?;
    if let Some(v) = &val_shard {
        if (v.header.n_in, v.header.n_out) != (h.n_in, h.n_out) || v.header.freqs != h.freqs {
            return Err(Error::ShapeMismatch("validation shard does not match the training shard".into()));
        }
    }
    let ckpt_dir = args.out.join("checkpoint");
    let resuming = args.resume && ckpt_dir.join("manifest.json").exists();
    let mut trainer = if resuming {
        let t = Trainer::load_checkpoint(&ckpt_dir)?;
        let c = &t.model.config;
        if (c.n_in, c.n_out, c.k_bins) != (h.n_in, h.n_out, h.freqs.len()) {
            return Err(Error::Config("checkpoint to resume does not match the training shard".into()));
        }
        t
    } else {
        let upscaling = args.layers.unwrap_or_else(|| (h.n_out - h.n_in).max(1) as usize);
        let mut mc = ModelConfig::ladder(h.n_in, h.n_out, h.freqs.len(), upscaling)?;
        macro_rules! apply {
            ($($f:ident),*) => { $( if let Some(v) = args.$f { mc.$f = v; } )* };
        }
        apply!(j_hidden, y_hidden, tac_hidden, ff_mult);
        Trainer::new(TtNet::new(mc, args.init_seed)?, resolve_train_config(args)?, args.init_seed)?
    };
    let run = TrainRun {
        model: trainer.model.config.clone(),
        train: trainer.cfg.clone(),
        init_seed: trainer.init_seed,
        resumed_from_epoch: resuming.then_some(trainer.state.epoch),
        stop_after_epochs: args.stop_after_epochs,
    };
    let mut m = ManifestBuilder::new("train", &args.out, &run)?;
    m.seed("init", trainer.init_seed);
    m.seed("batches", trainer.cfg.seed);
    m.input(&args.train)?;
    if let Some(v) = &args.val {
        m.input(v)?;
    }
    if resuming {
        m.input(&ckpt_dir.join("params.bin"))?;
    }
    if let Some(p) = &args.train_config {
        m.input(p)?;
    }

    let prepare = |s: &Shard| s.examples.iter().map(PreparedExample::new).collect::<Result<Vec<_>>>();
    let train_set = prepare(&train_shard)?;
    let val_set = val_shard.as_ref().map(prepare).transpose()?.unwrap_or_default();
    let grid = TrainingGrid {
        n_in: h.n_in,
        n_out: h.n_out,
        freqs: h.freqs.clone(),
    };
    let save = |t: &Trainer| -> Result<()> {
        t.save_checkpoint(&ckpt_dir)?;
        fs::write(ckpt_dir.join(GRID_FILE), serde_json::to_string_pretty(&grid)? + "\n")?;
        Ok(())
    };
    save(&trainer)?;
    let mut ran = 0;
    while args.stop_after_epochs.is_none_or(|n| ran < n) && trainer.run_epoch(&train_set, &val_set)? {
        ran += 1;
        save(&trainer)?;
        let last: Vec<String> = trainer
            .curve
            .iter()
            .rev()
            .take_while(|r| r.epoch + 1 == trainer.state.epoch)
            .map(|r| format!("{} {:.4e}", r.split, r.mse))
            .collect();
        eprintln!(
            "epoch {} step {} lr {:.2e}: {}",
            trainer.state.epoch,
            trainer.state.step,
            trainer.state.lr,
            last.into_iter().rev().collect::<Vec<_>>().join(", ")
        );
    }
    for f in ["manifest.json", "params.bin", "optimizer.bin", GRID_FILE] {
        m.output(&format!("checkpoint/{f}"));
    }
    let mut w = create(&m.output("loss.csv"))?;
    shtrans_nn::train::write_loss_csv(&mut w, &trainer.curve)?;
    w.flush()?;
    m.finish()
}

#[derive(Serialize)]
struct EvalRun {
    methods: Vec<&'static str>,
    data: Option<DatasetConfig>,
    sweep: Option<(String, Vec<f64>)>,
    count: usize,
    ridge: Vec<shtrans_core::RidgeConfig>,
    region: GridSpec,
}

pub fn eval(args: &EvalArgs) -> Result<RunManifest> {
    let mut methods = args.method.clone();
    methods.sort();
    methods.dedup();
    let ridge = match args.ridge.configs()?.as_slice() {
        [r] => *r,
        _ => return Err(Error::Config("eval takes a single --lambda".into())),
    };
    let sweep = args.parsed_sweep()?;
    // (axis, value label, examples)
    let mut sets: Vec<(String, String, Vec<TrainingExample>)> = Vec::new();
    let data = if let Some(shard_path) = &args.shard {
        let shard = load_shard(shard_path)?;
        let label = shard_path.file_stem().map_or("shard".into(), |s| s.to_string_lossy().into_owned());
        sets.push(("none".into(), label, shard.examples));
        None
    } else if let Some((axis, values)) = &sweep {
        let base = args.data.resolve()?;
        for &v in values {
            let cfg = sweep_config(&base, *axis, v, args.count)?;
            sets.push((axis.name().into(), format!("{v}"), generate_split(&cfg, Split::Test)?));
        }
        Some(base)
    } else {
        return Err(Error::Config("eval needs --shard or --sweep".into()));
    };

    let ckpt = if methods.contains(&Method::Ttnet) {
        let dir = args
            .checkpoint
            .as_deref()
            .ok_or_else(|| Error::Config("--method ttnet needs --checkpoint".into()))?;
        Some(load_checkpoint_model(dir)?)
    } else {
        None
    };
    let run = EvalRun {
        methods: methods.iter().map(|m| m.name()).collect(),
        data,
        sweep: sweep.as_ref().map(|(a, v)| (a.name().to_string(), v.clone())),
        count: args.count,
        ridge: vec![ridge],
        region: args.region.spec(),
    };
    let mut m = ManifestBuilder::new("eval", &args.out, &run)?;
    if let Some(p) = &args.shard {
        m.input(p)?;
    }
    if let Some(dir) = &args.checkpoint {
        if ckpt.is_some() {
            m.input(&dir.join("params.bin"))?;
        }
    }

    let mut groups = Vec::new();
    for (axis, value, examples) in &sets {
        let references: Vec<ShCoeffSet> = examples.iter().map(|e| e.target.clone()).collect();
        for method in &methods {
            let estimates = match method {
                Method::Lsm => examples.iter().map(|e| Ok(lsm_estimate(e, ridge)?.coeffs)).collect::<Result<Vec<_>>>()?,
                Method::Ttnet => {
                    let ck = ckpt.as_ref().expect("loaded above");
                    examples
                        .iter()
                        .map(|e| {
                            check_compatible(ck, e.n_in(), e.n_out(), e.freqs())?;
                            ck.model.predict(e)
                        })
                        .collect::<Result<Vec<_>>>()?
                }
                Method::Oracle => references.clone(),
            };
            groups.push(SuiteGroup {
                method: method.name().into(),
                sweep_axis: axis.clone(),
                sweep_value: value.clone(),
                estimates,
                references: references.clone(),
            });
        }
    }
    let (report, groups) = evaluate(groups, args.region.spec())?;
    for r in report.averages() {
        eprintln!(
            "{:>6} {}={}: EDM {:.4e}  COSS {:.4}  SDR {:.2} dB",
            r.method, r.sweep_axis, r.sweep_value, r.edm, r.coss, r.sdr_db
        );
    }
    write_report(&mut m, &report, &groups)?;
    m.finish()
}

#[derive(Serialize)]
struct RenderRun {
    data: DatasetConfig,
    freqs: Vec<f64>,
    methods: Vec<&'static str>,
    plane: GridSpec,
    ridge: shtrans_core::RidgeConfig,
}

pub fn render(args: &RenderArgs) -> Result<RunManifest> {
    let cfg = args.data.resolve()?;
    let grid = cfg.freqs();
    let bins = args
        .freq
        .iter()
        .map(|&f| {
            grid.iter()
                .position(|&g| (g - f).abs() <= 1e-6 * g.abs().max(1.0))
                .ok_or_else(|| {
                    Error::Config(format!(
                        "frequency {f} Hz not on grid {}..={} step {}",
                        cfg.freq_lo, cfg.freq_hi, cfg.freq_step
                    ))
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut methods = if args.methods.is_empty() {
        let mut d = vec![RenderMethod::Ideal, RenderMethod::Lsm];
        if args.checkpoint.is_some() {
            d.push(RenderMethod::Ttnet);
        }
        d
    } else {
        args.methods.clone()
    };
    methods.sort();
    methods.dedup();
    let ridge = match args.ridge.configs()?.as_slice() {
        [r] => *r,
        _ => return Err(Error::Config("render takes a single --lambda".into())),
    };
    let scene_file: SceneFile = read_json(&args.scene)?;
    let scene = scene_file.into_scene()?;
    let ex = make_example(&scene, &cfg)?;
    let plane = GridSpec::plane_xy(args.extent, args.step);
    let run = RenderRun {
        data: cfg.clone(),
        freqs: bins.iter().map(|&i| grid[i]).collect(),
        methods: methods.iter().map(|m| m.name()).collect(),
        plane,
        ridge,
    };
    let mut m = ManifestBuilder::new("render", &args.out, &run)?;
    m.seed("scene", scene.seed);
    m.input(&args.scene)?;
    for method in &methods {
        let coeffs = match method {
            RenderMethod::Ideal => ex.target.clone(),
            RenderMethod::Lsm => lsm_estimate(&ex, ridge)?.coeffs,
            RenderMethod::Ttnet => {
                let dir = args
                    .checkpoint
                    .as_deref()
                    .ok_or_else(|| Error::Config("ttnet render needs --checkpoint".into()))?;
                let ck = load_checkpoint_model(dir)?;
                check_compatible(&ck, cfg.n_in, cfg.n_out, &grid)?;
                m.input(&dir.join("params.bin"))?;
                ck.model.predict(&ex)?
            }
        }
        .scaled(ex.scale);
        for &bin in &bins {
            let field = field_grid(&coeffs, bin, plane)?;
            let mut w = create(&m.output(&format!("{}_{}hz.csv", method.name(), grid[bin])))?;
            field.write_csv(&mut w)?;
            w.flush()?;
        }
    }
    m.finish()
}

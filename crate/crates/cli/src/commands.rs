//! One function per subcommand. Every command resolves its config (file plus
//! flag overrides), does the work, then writes its outputs atomically along
//! with a resolved-config echo and a run manifest, so a run can be replayed
//! and checked byte for byte.

use std::path::{Path, PathBuf};

use cropseries_core::adapt::{train_da, DomainPair};
use cropseries_core::analysis::{
    cohort_confidence, confidence_progression, cover_crop_table, detect_cover_crop,
    earliest_detection, CohortCurve, CoverCropStatus,
};
use cropseries_core::classifier::{ModelBundle, Pooling};
use cropseries_core::data::Dataset;
use cropseries_core::metrics::{compare_methods, EvalConfig, Method};
use cropseries_core::phenology::{ndvi_series, synth_dataset, CropClass};
use cropseries_core::rng::derive_seed;

use crate::config::{
    config_echo, load_config, AdaptCommandConfig, CoverCommandConfig, EarlyCommandConfig,
    EvaluateCommandConfig, GenerateConfig, TrainCommandConfig,
};
use crate::csvio::{
    cover_pixels_csv, cover_table_csv, curves_csv, load_raw_dataset, report_csv,
    save_raw_dataset, DatasetMeta,
};
use crate::error::CliError;
use crate::fsio::write_atomic;
use crate::manifest::RunManifest;
use crate::modelio::{load_model, save_adapted, save_model};
use crate::report::{render_cover_table, render_report};
use crate::svg::cohort_svg;

/// Per-scenario salt offset for `generate`; the standalone `adapt` command
/// gets its own stream too.
const GENERATE_SALT_BASE: u64 = 40_000;
const ADAPT_SALT: u64 = 20_000;

pub struct Ctx {
    pub seed: u64,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
}

impl Ctx {
    fn out_path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Write the resolved-config echo and the run manifest. `outputs` must
    /// already exist on disk; the echo is digested alongside them.
    fn finish(
        &self,
        command: &str,
        echo: &str,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
    ) -> Result<(), CliError> {
        let echo_path = self.out_path(&format!("{command}_config.json"));
        write_atomic(&echo_path, echo.as_bytes())?;

        let mut manifest = RunManifest::new(command, self.seed, echo);
        for p in inputs {
            manifest.add_input(p)?;
        }
        for p in outputs {
            manifest.add_output(p)?;
        }
        manifest.add_output(&echo_path)?;
        manifest.write(&self.out_path(&format!("{command}_manifest.json")))
    }
}

fn config_inputs(ctx: &Ctx) -> Vec<PathBuf> {
    ctx.config.iter().cloned().collect()
}

/// Shrink a class mix to `total` pixels, largest remainder, ties to the
/// earlier class.
fn scale_mix(
    mix: &[(CropClass, usize)],
    total: usize,
) -> Result<Vec<(CropClass, usize)>, CliError> {
    let sum: u128 = mix.iter().map(|&(_, n)| n as u128).sum();
    if sum == 0 {
        return Err(CliError::validation("class mix has no pixels"));
    }
    if total == 0 {
        return Err(CliError::validation("scenario count must be positive"));
    }
    let mut out: Vec<(CropClass, usize)> = Vec::with_capacity(mix.len());
    let mut remainders: Vec<(u128, usize)> = Vec::with_capacity(mix.len());
    let mut assigned = 0usize;
    for (i, &(class, n)) in mix.iter().enumerate() {
        let product = total as u128 * n as u128;
        out.push((class, (product / sum) as usize));
        assigned += (product / sum) as usize;
        remainders.push((product % sum, i));
    }
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = total - assigned;
    for &(_, i) in &remainders {
        if left == 0 {
            break;
        }
        out[i].1 += 1;
        left -= 1;
    }
    out.retain(|&(_, n)| n > 0);
    if out.is_empty() {
        return Err(CliError::validation(format!(
            "count {total} leaves every class empty"
        )));
    }
    Ok(out)
}

pub fn cmd_generate(ctx: &Ctx, count: Option<usize>) -> Result<(), CliError> {
    let cfg: GenerateConfig = load_config(ctx.config.as_deref())?;
    let mix = cfg.parsed_mix()?;
    if cfg.scenarios.is_empty() {
        return Err(CliError::validation("no scenarios configured"));
    }
    let echo = config_echo(&cfg)?;

    let mut outputs = Vec::new();
    for (idx, spec) in cfg.scenarios.iter().enumerate() {
        if spec.name.is_empty() || !spec.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        {
            return Err(CliError::validation(format!(
                "scenario name '{}' must be nonempty [A-Za-z0-9_]",
                spec.name
            )));
        }
        let scenario_mix = match count.or(spec.count) {
            Some(total) => scale_mix(&mix, total)?,
            None => mix.clone(),
        };
        let season = cfg.season(spec);
        let seed = derive_seed(ctx.seed, GENERATE_SALT_BASE + idx as u64);
        let raw = synth_dataset(&scenario_mix, &season, seed)?;
        let path = ctx.out_path(&format!("{}.csv", spec.name));
        save_raw_dataset(&path, &raw, cfg.window_composites, cfg.stride_composites)?;
        println!(
            "{}: {} pixels, {} classes, digest {}",
            spec.name,
            raw.pixels.len(),
            raw.class_names.len(),
            raw.digest()
        );
        outputs.push(crate::csvio::meta_path(&path));
        outputs.push(path);
    }
    ctx.finish("generate", &echo, &config_inputs(ctx), &outputs)
}

fn load_windowed(path: &Path) -> Result<(Dataset, DatasetMeta), CliError> {
    let (raw, meta) = load_raw_dataset(path)?;
    let data = Dataset::from_raw(&raw, meta.window_composites, meta.stride_composites)?;
    Ok((data, meta))
}

/// Window a file using someone else's layout settings, for targets that must
/// match an already trained model.
fn load_windowed_as(path: &Path, meta: &DatasetMeta) -> Result<Dataset, CliError> {
    let (raw, _) = load_raw_dataset(path)?;
    Ok(Dataset::from_raw(
        &raw,
        meta.window_composites,
        meta.stride_composites,
    )?)
}

pub fn cmd_train(
    ctx: &Ctx,
    input: Option<PathBuf>,
    method: Option<String>,
) -> Result<(), CliError> {
    let mut cfg: TrainCommandConfig = load_config(ctx.config.as_deref())?;
    if let Some(p) = input {
        cfg.input = p.display().to_string();
    }
    if let Some(m) = method {
        cfg.method = m;
    }
    let echo = config_echo(&cfg)?;

    let method = Method::parse(&cfg.method)
        .ok_or_else(|| CliError::validation(format!("unknown method '{}'", cfg.method)))?;
    let pooling = match method {
        Method::LstmAtt => Pooling::Attention,
        Method::Lstm => Pooling::LastHidden,
        other => {
            return Err(CliError::validation(format!(
                "train persists recurrent bundles; '{}' runs inside evaluate",
                other.name()
            )))
        }
    };

    let input_path = PathBuf::from(&cfg.input);
    let (data, _) = load_windowed(&input_path)?;
    let (train, _test) = data.split(
        (cfg.split.train_fraction, cfg.split.test_fraction),
        ctx.seed,
    )?;
    let train_cfg = cfg.lstm.train_config(pooling);
    let model = ModelBundle::train(&train, &train_cfg, derive_seed(ctx.seed, method.seed_salt()))?;

    let model_path = ctx.out_path("model.json");
    save_model(&model_path, &model)?;
    println!(
        "trained {} on {} pixels ({} classes), final loss {:.4}, digest {}",
        method.name(),
        train.len(),
        train.class_count(),
        model.meta.loss_curve.last().copied().unwrap_or(f64::NAN),
        model.digest()
    );

    let mut inputs = config_inputs(ctx);
    inputs.push(crate::csvio::meta_path(&input_path));
    inputs.push(input_path);
    ctx.finish("train", &echo, &inputs, &[model_path])
}

pub fn cmd_adapt(
    ctx: &Ctx,
    model: Option<PathBuf>,
    source: Option<PathBuf>,
    target: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut cfg: AdaptCommandConfig = load_config(ctx.config.as_deref())?;
    if let Some(p) = model {
        cfg.model = p.display().to_string();
    }
    if let Some(p) = source {
        cfg.source = p.display().to_string();
    }
    if let Some(p) = target {
        cfg.target = p.display().to_string();
    }
    let echo = config_echo(&cfg)?;

    let model_path = PathBuf::from(&cfg.model);
    let source_path = PathBuf::from(&cfg.source);
    let target_path = PathBuf::from(&cfg.target);

    let bundle = load_model(&model_path)?;
    let (source_data, source_meta) = load_windowed(&source_path)?;
    let (source_train, _) = source_data.split(
        (cfg.split.train_fraction, cfg.split.test_fraction),
        ctx.seed,
    )?;
    if source_train.digest() != bundle.meta.train_digest {
        return Err(CliError::validation(format!(
            "model was trained on digest {} but the source split hashes to {}; \
             pass the dataset and seed the model was trained with",
            bundle.meta.train_digest,
            source_train.digest()
        )));
    }
    let target_data = load_windowed_as(&target_path, &source_meta)?;

    let pair = DomainPair::new(source_train, target_data)?;
    let adapted = train_da(
        &pair,
        &bundle,
        &cfg.da.da_config(),
        derive_seed(ctx.seed, ADAPT_SALT),
    )?;

    let out_path = ctx.out_path("adapted.json");
    save_adapted(&out_path, &adapted)?;
    println!(
        "adapted to {} target pixels, final disc loss {:.4}, final adapt loss {:.4}, digest {}",
        pair.target.len(),
        adapted.meta.disc_loss_curve.last().copied().unwrap_or(f64::NAN),
        adapted.meta.adapt_loss_curve.last().copied().unwrap_or(f64::NAN),
        adapted.digest()
    );

    let mut inputs = config_inputs(ctx);
    inputs.push(model_path);
    inputs.push(crate::csvio::meta_path(&source_path));
    inputs.push(source_path);
    inputs.push(crate::csvio::meta_path(&target_path));
    inputs.push(target_path);
    ctx.finish("adapt", &echo, &inputs, &[out_path])
}

pub fn cmd_evaluate(ctx: &Ctx, train: Option<PathBuf>) -> Result<(), CliError> {
    let mut cfg: EvaluateCommandConfig = load_config(ctx.config.as_deref())?;
    if let Some(p) = train {
        cfg.train = p.display().to_string();
    }
    let echo = config_echo(&cfg)?;

    let methods: Vec<Method> = cfg
        .methods
        .iter()
        .map(|m| {
            Method::parse(m).ok_or_else(|| CliError::validation(format!("unknown method '{m}'")))
        })
        .collect::<Result<_, _>>()?;

    let train_path = PathBuf::from(&cfg.train);
    let (data, meta) = load_windowed(&train_path)?;
    let (train_ds, test_ds) = data.split(
        (cfg.split.train_fraction, cfg.split.test_fraction),
        ctx.seed,
    )?;

    let mut scenarios = vec![(String::from("in_domain"), test_ds)];
    let mut scenario_paths = Vec::new();
    for s in &cfg.scenarios {
        let path = PathBuf::from(&s.path);
        let ds = load_windowed_as(&path, &meta)?;
        if ds.class_names != train_ds.class_names {
            return Err(CliError::validation(format!(
                "scenario '{}' has classes {:?}, train file has {:?}",
                s.name, ds.class_names, train_ds.class_names
            )));
        }
        scenarios.push((s.name.clone(), ds));
        scenario_paths.push(path);
    }

    let eval_cfg = EvalConfig {
        lstm: cfg.lstm.train_config(Pooling::Attention),
        ann: cfg.ann.ann_config(),
        da: cfg.da.da_config(),
        positive_class: cfg.positive_class,
    };
    let report = compare_methods(&train_ds, &scenarios, &methods, &eval_cfg, ctx.seed)?;

    let report_path = ctx.out_path("report.csv");
    write_atomic(&report_path, report_csv(&report).as_bytes())?;
    print!("{}", render_report(&report));

    let mut inputs = config_inputs(ctx);
    inputs.push(crate::csvio::meta_path(&train_path));
    inputs.push(train_path);
    for p in scenario_paths {
        inputs.push(crate::csvio::meta_path(&p));
        inputs.push(p);
    }
    ctx.finish("evaluate", &echo, &inputs, &[report_path])
}

pub fn cmd_early(
    ctx: &Ctx,
    model: Option<PathBuf>,
    input: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut cfg: EarlyCommandConfig = load_config(ctx.config.as_deref())?;
    if let Some(p) = model {
        cfg.model = p.display().to_string();
    }
    if let Some(p) = input {
        cfg.input = p.display().to_string();
    }
    if !(0.0..=1.0).contains(&cfg.threshold) {
        return Err(CliError::validation(format!(
            "threshold {} out of [0, 1]",
            cfg.threshold
        )));
    }
    if cfg.patience == 0 {
        return Err(CliError::validation("patience must be positive"));
    }
    let echo = config_echo(&cfg)?;

    let model_path = PathBuf::from(&cfg.model);
    let input_path = PathBuf::from(&cfg.input);
    let bundle = load_model(&model_path)?;
    let (data, _) = load_windowed(&input_path)?;
    if data.class_names != bundle.class_names {
        return Err(CliError::validation(format!(
            "dataset classes {:?} do not match model classes {:?}",
            data.class_names, bundle.class_names
        )));
    }

    let mut curves: Vec<(String, CohortCurve)> = Vec::new();
    for (c, name) in data.class_names.iter().enumerate() {
        let curve = cohort_confidence(&bundle, &data, c)?;
        curves.push((name.clone(), curve));
    }

    // Detection summary per class: share detected and mean first step.
    println!("class         pixels  detected  mean_first_step");
    for (c, name) in data.class_names.iter().enumerate() {
        let mut steps = Vec::new();
        let mut total = 0usize;
        for p in &data.pixels {
            if p.label != c {
                continue;
            }
            total += 1;
            let curve = confidence_progression(&bundle, &p.sequence)?;
            if let Some(t) = earliest_detection(&curve, c, cfg.threshold, cfg.patience)? {
                steps.push(t as f64);
            }
        }
        let mean = if steps.is_empty() {
            String::from("-")
        } else {
            format!("{:.2}", steps.iter().sum::<f64>() / steps.len() as f64)
        };
        println!("{name:<12}  {total:>6}  {:>8}  {mean:>15}", steps.len());
    }

    let csv_path = ctx.out_path("early_curves.csv");
    write_atomic(&csv_path, curves_csv(&curves).as_bytes())?;
    let mut outputs = vec![csv_path];
    if cfg.svg {
        let svg_path = ctx.out_path("early_curves.svg");
        write_atomic(
            &svg_path,
            cohort_svg(&curves, Some(cfg.threshold))?.as_bytes(),
        )?;
        outputs.push(svg_path);
    }

    let mut inputs = config_inputs(ctx);
    inputs.push(model_path);
    inputs.push(crate::csvio::meta_path(&input_path));
    inputs.push(input_path);
    ctx.finish("early", &echo, &inputs, &outputs)
}

pub fn cmd_covercrops(ctx: &Ctx, input: Option<PathBuf>) -> Result<(), CliError> {
    let mut cfg: CoverCommandConfig = load_config(ctx.config.as_deref())?;
    if let Some(p) = input {
        cfg.input = p.display().to_string();
    }
    let echo = config_echo(&cfg)?;
    let rule = cfg.rule.rule();

    let input_path = PathBuf::from(&cfg.input);
    let (raw, _) = load_raw_dataset(&input_path)?;

    let mut labels = Vec::with_capacity(raw.pixels.len());
    let mut statuses: Vec<CoverCropStatus> = Vec::with_capacity(raw.pixels.len());
    let mut pixel_rows = Vec::with_capacity(raw.pixels.len());
    for p in &raw.pixels {
        let ndvi = ndvi_series(&p.sequence)?;
        let status = detect_cover_crop(&ndvi, &rule)?;
        labels.push(p.class_label);
        statuses.push(status);
        pixel_rows.push((p.pixel_id.clone(), p.class_label, status));
    }
    // Unit area per pixel; swap in real field areas when they exist.
    let areas = vec![1.0; raw.pixels.len()];
    let table = cover_crop_table(&raw.class_names, &labels, &statuses, &areas)?;

    let pixels_path = ctx.out_path("cover_pixels.csv");
    write_atomic(&pixels_path, cover_pixels_csv(&pixel_rows).as_bytes())?;
    let table_path = ctx.out_path("cover_table.csv");
    write_atomic(&table_path, cover_table_csv(&table).as_bytes())?;
    print!("{}", render_cover_table(&table));

    let mut inputs = config_inputs(ctx);
    inputs.push(crate::csvio::meta_path(&input_path));
    inputs.push(input_path);
    ctx.finish("covercrops", &echo, &inputs, &[pixels_path, table_path])
}

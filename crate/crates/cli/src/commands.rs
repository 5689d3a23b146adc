use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sit_core::attention::{average_maps, vertex_attention, write_unfolding_png, VertexAttentionMap};
use sit_core::autodiff::Checkpoint;
use sit_core::data::{generate_synthetic, Dataset, DatasetManifest, Loader, Split, SyntheticSpec, SPEC_KEYS};
use sit_core::error::{Error, Result};
use sit_core::geometry::io::{read_mesh, read_signal, write_mesh, write_signal};
use sit_core::geometry::{build_icosphere, build_patch_table, Resampler};
use sit_core::model::SiTModel;
use sit_core::training::{
    predict_examples, pretrain_mpp, train as run_training, Mode, Objective, Task, TrainConfig,
    TrainMetadata, TrainOptions, CONFIG_KEYS,
};

use crate::io_err;

pub struct Globals {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

impl Globals {
    fn threads(&self) -> usize {
        self.threads
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from))
    }
}

fn key_table(title: &str, keys: &[(&str, &str)]) -> String {
    let mut s = format!("{title}\n");
    for (k, d) in keys {
        let _ = writeln!(s, "  {k:<18} {d}");
    }
    s
}

pub fn config_help() -> String {
    key_table("Config keys (key=value, one per line, # comments):", CONFIG_KEYS)
}

pub fn synth_help() -> String {
    key_table("Spec keys (key=value, one per line, # comments):", SPEC_KEYS)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

/// `<output>.resolved.cfg` beside a single-file output.
fn snapshot(output: &Path, pairs: &[(&str, String)]) -> Result<()> {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".resolved.cfg");
    let text: String = pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    write_text(&output.with_file_name(name), &text)
}

fn shown(p: &Path) -> String {
    p.display().to_string()
}

pub fn icosphere(order: u32, output: &Path) -> Result<()> {
    let mesh = build_icosphere(order)?;
    write_mesh(output, &mesh)?;
    snapshot(output, &[("order", order.to_string())])?;
    println!("{}: {} vertices, {} faces", output.display(), mesh.vertex_count(), mesh.face_count());
    Ok(())
}

pub fn patch_table(high: u32, low: u32, output: &Path) -> Result<()> {
    let table = build_patch_table(high, low)?;
    let mut text = format!(
        "patch_table {high} {low} {} {}\n",
        table.patch_count(),
        table.vertices_per_patch()
    );
    for patch in table.patches() {
        let line: Vec<String> = patch.iter().map(u32::to_string).collect();
        text.push_str(&line.join(" "));
        text.push('\n');
    }
    write_text(output, &text)?;
    snapshot(output, &[("high", high.to_string()), ("low", low.to_string())])?;
    println!("{}: {} patches x {} vertices", output.display(), table.patch_count(), table.vertices_per_patch());
    Ok(())
}

pub fn resample(input: &Path, src: &Path, dst: &Path, output: &Path) -> Result<()> {
    let signal = read_signal(input)?;
    let (src_mesh, dst_mesh) = (read_mesh(src)?, read_mesh(dst)?);
    let out = Resampler::new(&src_mesh, &dst_mesh)?.apply(&signal)?;
    write_signal(output, &out)?;
    snapshot(output, &[("in", shown(input)), ("src", shown(src)), ("dst", shown(dst))])?;
    println!("{}: {} vertices x {} channels", output.display(), out.vertex_count(), out.channels());
    Ok(())
}

pub fn synth(g: &Globals, spec_path: Option<&Path>, output: &Path) -> Result<()> {
    let mut spec = match spec_path {
        Some(p) => SyntheticSpec::parse(&read_text(p)?)?,
        None => SyntheticSpec::default(),
    };
    if let Some(seed) = g.seed {
        spec.seed = seed;
    }
    let manifest = generate_synthetic(&spec, output)?;
    println!("{}: {} rows", output.display(), manifest.rows.len());
    Ok(())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Parses a config file plus overrides and the global flags, with paths
/// resolved against the file's directory.
fn load_config(g: &Globals, path: &Path, overrides: &[String]) -> Result<TrainConfig> {
    let mut text = read_text(path)?;
    text.push('\n');
    for o in overrides {
        if !o.contains('=') {
            return Err(Error::Config(format!("override {o:?} is not key=value")));
        }
        // Later lines may not repeat a key, so drop the file's copy.
        let key = o.split('=').next().unwrap_or("").trim();
        text = text
            .lines()
            .filter(|l| l.split('#').next().unwrap_or("").split('=').next().map(str::trim) != Some(key))
            .map(|l| format!("{l}\n"))
            .collect();
        text.push_str(o);
        text.push('\n');
    }
    let mut cfg = TrainConfig::parse(&text)?;
    if let Some(seed) = g.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(t) = g.threads {
        cfg.set("threads", &t.to_string())?;
    }
    let base = path.parent().unwrap_or(Path::new(""));
    cfg.manifest = cfg.manifest.as_ref().map(|m| resolve(base, m));
    cfg.out_dir = resolve(base, &cfg.out_dir);
    Ok(cfg)
}

fn load_dataset(cfg: &TrainConfig) -> Result<Dataset> {
    let path = cfg
        .manifest
        .as_ref()
        .ok_or_else(|| Error::Config("config needs a `manifest` key".into()))?;
    let manifest = DatasetManifest::read(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    Dataset::load(&manifest, base, cfg.patch_order)
}

fn options(cfg: &TrainConfig) -> TrainOptions {
    TrainOptions {
        out_dir: Some(cfg.out_dir.clone()),
        time_limit: None,
    }
}

pub fn pretrain(g: &Globals, config: &Path, overrides: &[String]) -> Result<()> {
    let cfg = load_config(g, config, overrides)?;
    let dataset = load_dataset(&cfg)?;
    let result = pretrain_mpp(&dataset, &cfg, None, &options(&cfg))?;
    println!(
        "best val_loss {:.6} at epoch {} -> {}",
        result.best_metric,
        result.best_epoch,
        cfg.out_dir.join(sit_core::training::BEST_CHECKPOINT).display()
    );
    Ok(())
}

pub fn train(g: &Globals, config: &Path, overrides: &[String], from: Option<&Path>, freeze: bool) -> Result<()> {
    let mut cfg = load_config(g, config, overrides)?;
    if freeze {
        cfg.set("freeze_backbone", "true")?;
    }
    let init = match from {
        Some(p) => {
            cfg.use_finetune_defaults();
            Some(Checkpoint::load(p)?)
        }
        None => None,
    };
    cfg.validate()?;
    let dataset = load_dataset(&cfg)?;
    let result = run_training(&dataset, &cfg, init.as_ref(), &options(&cfg))?;
    println!(
        "best val_mae {:.4} at epoch {} -> {}",
        result.best_metric,
        result.best_epoch,
        cfg.out_dir.join(sit_core::training::BEST_CHECKPOINT).display()
    );
    Ok(())
}

struct Trained {
    model: SiTModel<f32>,
    meta: TrainMetadata,
}

fn load_trained(path: &Path) -> Result<Trained> {
    let ck = Checkpoint::load(path)?;
    let meta = TrainMetadata::from_record(&ck.config)?;
    if meta.objective != Objective::Regression {
        return Err(Error::Config(format!(
            "{} holds a pretraining checkpoint; fine-tune it with `train --from` first",
            path.display()
        )));
    }
    Ok(Trained {
        model: SiTModel::from_checkpoint(&ck)?,
        meta,
    })
}

pub fn predict(g: &Globals, ckpt: &Path, manifest_path: &Path, output: &Path) -> Result<()> {
    let t = load_trained(ckpt)?;
    let manifest = DatasetManifest::read(manifest_path)?;
    let loader = Loader::new(t.meta.high_order, t.meta.patch_order, manifest_path.parent().unwrap_or(Path::new("")))?;
    let examples = manifest
        .rows
        .iter()
        .map(|r| loader.load_example(r, Some(&t.meta.norm)))
        .collect::<Result<Vec<_>>>()?;
    let preds = predict_examples(&t.model, &t.meta, &examples, g.threads())?;
    let mut csv = String::from("example,subject,hemi,split,prediction,target\n");
    for ((row, p), ex) in manifest.rows.iter().zip(&preds).zip(&examples) {
        let target = match t.meta.task {
            Task::ScanAge => ex.labels.scan_age,
            Task::BirthAge => ex.labels.birth_age,
        };
        let _ = writeln!(
            csv,
            "{},{},{},{},{p},{target}",
            row.example_id(),
            row.subject,
            row.hemisphere.tag(),
            row.split
        );
    }
    write_text(output, &csv)?;
    snapshot(output, &[("ckpt", shown(ckpt)), ("manifest", shown(manifest_path))])?;
    println!("{}: {} predictions", output.display(), preds.len());
    Ok(())
}

pub struct AttentionRequest<'a> {
    pub ckpt: &'a Path,
    pub manifest: &'a Path,
    pub example: Option<&'a str>,
    pub threshold: Option<f64>,
    pub average: Option<&'a str>,
    pub png: Option<&'a Path>,
    pub output: &'a Path,
}

pub fn attention(g: &Globals, req: &AttentionRequest<'_>) -> Result<()> {
    let t = load_trained(req.ckpt)?;
    let manifest = DatasetManifest::read(req.manifest)?;
    let loader = Loader::new(t.meta.high_order, t.meta.patch_order, req.manifest.parent().unwrap_or(Path::new("")))?;
    let rows: Vec<_> = match (req.average, req.example) {
        (Some(split), _) => {
            let split: Split = split.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
            let rows: Vec<_> = manifest.split(split).collect();
            if rows.is_empty() {
                return Err(Error::Config(format!("split {split} has no rows")));
            }
            rows
        }
        (None, Some(id)) => vec![manifest
            .find(id)
            .ok_or_else(|| Error::Config(format!("example {id} is not in the manifest")))?],
        (None, None) => return Err(Error::Config("give --example or --average".into())),
    };
    let task = t.meta.task.to_string();
    let maps = sit_core::training::parallel_map(rows.len(), g.threads(), |i| {
        let ex = loader.load_example(rows[i], Some(&t.meta.norm))?;
        let confound = match &t.meta.confound {
            Some(enc) => Some(enc.clone().normalize(&[ex.labels.scan_age], Mode::Eval)?[0]),
            None => None,
        };
        vertex_attention(&t.model, &ex, confound, loader.table(), &task)
    })?;
    let mut map: VertexAttentionMap = average_maps(&maps)?;
    if let Some(q) = req.threshold {
        map = map.thresholded(q)?;
    }
    write_signal(req.output, &map.to_signal()?)?;
    if let Some(png) = req.png {
        write_unfolding_png(&map.heads, &build_icosphere(t.meta.high_order)?, 720, png)?;
    }
    let mut pairs = vec![
        ("ckpt", shown(req.ckpt)),
        ("manifest", shown(req.manifest)),
        ("method", "rollout".to_owned()),
        ("subject", map.subject.clone()),
        ("task", map.task.clone()),
        ("layers", format!("{}..{}", map.layers.start, map.layers.end)),
    ];
    if let Some(q) = req.threshold {
        pairs.push(("threshold", q.to_string()));
    }
    snapshot(req.output, &pairs)?;
    println!("{}: {} heads x {} vertices", req.output.display(), map.heads.len(), map.vertex_count());
    Ok(())
}

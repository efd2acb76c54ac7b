use std::fs;
use std::path::{Path, PathBuf};

use pwjoint::acquisition::ImagingGrid;
use pwjoint::config::{PsfSpec, RunConfig};
use pwjoint::das::{bmode, compound, das_beamform, envelope};
use pwjoint::error::Result;
use pwjoint::forward::{build_or_load, cache_dir_from_env};
use pwjoint::io::{export_pgm, export_png, read_container, write_atomic, write_container, ContainerItem, Kind};
use pwjoint::metrics::{cnr, contrast_metrics, format_table, gcnr, point_metrics, Mask, MetricsReport, RegionSpec};
use pwjoint::picmus::{ingest_picmus, PicmusSelection};
use pwjoint::pipeline::{compare_modes, required_samples, Scene};
use pwjoint::{BModeImage, ChannelData, Error, Phantom, PlaneWaveTx, RfImage};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::{Cli, Command, ExampleConfig, MetricKind, MetricsArgs, ModelCommand, SolveArgs};

pub fn run(cli: &Cli) -> Result<()> {
    let cache = cli.cache_dir.clone().or_else(cache_dir_from_env);
    match &cli.command {
        Command::Simulate { config, out_dir } => simulate(config, out_dir.as_deref(), cache.as_deref()),
        Command::Model(ModelCommand::Build { config }) => model_build(config, cache.as_deref()),
        Command::Das { config, channel, out } => das(config, channel, out),
        Command::Compound { out, images } => compound_images(images, out),
        Command::Solve(a) => solve(a, cache.as_deref()),
        Command::Metrics(a) => metrics(a),
        Command::ExportPng { image, out, dr } => export(image, out, *dr),
        Command::Compare { config, out_dir } => compare(config, out_dir.as_deref(), cache.as_deref()),
        Command::Config { example } => {
            let cfg = match example {
                ExampleConfig::Points => RunConfig::desk_points(),
                ExampleConfig::Cyst => RunConfig::desk_cyst(),
            };
            println!("{}", serde_json::to_string_pretty(&cfg)?);
            Ok(())
        }
        Command::IngestPicmus {
            file,
            angle_index,
            expected_fs,
            out,
        } => {
            let sel = PicmusSelection {
                angle_index: *angle_index,
                expected_fs: *expected_fs,
            };
            let (ch, probe) = ingest_picmus(file, sel)?;
            save(&ch, out, &provenance("ingest-picmus", &[file])?)?;
            println!(
                "{}: angle {:.4} rad, {} elements, {} samples, fs {} Hz",
                out.display(),
                ch.tx.angle,
                probe.num_elements,
                ch.num_samples,
                probe.sampling_freq
            );
            Ok(())
        }
    }
}

/// Short content hash of each input, recorded in every written container.
fn provenance(command: &str, inputs: &[&Path]) -> Result<Value> {
    let mut files = serde_json::Map::new();
    for p in inputs {
        files.insert(p.display().to_string(), json!(digest(&fs::read(p)?)));
    }
    Ok(json!({
        "tool": concat!("pwjoint-cli ", env!("CARGO_PKG_VERSION")),
        "command": command,
        "inputs": files,
    }))
}

fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn save<T: ContainerItem>(item: &T, path: &Path, prov: &Value) -> Result<()> {
    save_with(item, path, prov, |_| {})
}

fn save_with<T: ContainerItem>(item: &T, path: &Path, prov: &Value, edit: impl FnOnce(&mut Value)) -> Result<()> {
    let mut c = item.to_container()?;
    c.metadata["provenance"] = prov.clone();
    edit(&mut c.metadata);
    write_container(&c, path)
}

fn output_dir<'a>(flag: Option<&'a Path>, cfg: &'a RunConfig) -> Result<&'a Path> {
    flag.or(cfg.output_dir.as_deref())
        .ok_or_else(|| Error::Inconsistent("no output directory: pass --out-dir or set output_dir".into()))
}

fn grid_of(cfg: &RunConfig, probe: &pwjoint::ProbeGeometry) -> Result<ImagingGrid> {
    ImagingGrid::new(probe, cfg.grid.nz, cfg.grid.nx, cfg.grid.z_origin)
}

fn simulate(config: &Path, out_dir: Option<&Path>, cache: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let out_dir = output_dir(out_dir, &cfg)?;
    let spec = cfg
        .phantom
        .as_ref()
        .ok_or_else(|| Error::Inconsistent("configuration has no phantom to simulate".into()))?;
    let scene = Scene::new(&cfg, cache)?;
    let phantom = scene.phantom(spec, cfg.seed)?;
    let channels = scene.simulate(&phantom, cfg.snr_db, cfg.seed)?;
    fs::create_dir_all(out_dir)?;
    let prov = provenance("simulate", &[config])?;
    save(&phantom, &out_dir.join("phantom.usjd"), &prov)?;
    for (k, ch) in channels.iter().enumerate() {
        save(ch, &out_dir.join(format!("channel-{k}.usjd")), &prov)?;
    }
    save_with(&scene.psf, &out_dir.join("psf.usjd"), &prov, |m| {
        m["spacing"] = json!({ "dz": scene.grid.dz, "dx": scene.grid.dx });
    })?;
    println!(
        "{}: phantom, {} channel file(s), psf",
        out_dir.display(),
        channels.len()
    );
    Ok(())
}

fn model_build(config: &Path, cache: Option<&Path>) -> Result<()> {
    let dir = cache.ok_or_else(|| {
        Error::Inconsistent("no cache directory: pass --cache-dir or set PWJOINT_CACHE_DIR".into())
    })?;
    let cfg = RunConfig::load(config)?;
    let grid = grid_of(&cfg, &cfg.probe)?;
    let m = cfg
        .num_samples
        .unwrap_or_else(|| required_samples(&cfg.probe, &grid, &cfg.angles));
    for &a in &cfg.angles {
        let phi = build_or_load(&cfg.probe, &grid, PlaneWaveTx::new(a)?, m, &cfg.apodization, Some(dir))?;
        println!(
            "angle {a:+.4} rad: {} x {}, {} nonzeros, {}",
            phi.num_rows(),
            phi.num_cols(),
            phi.nnz(),
            dir.join(format!("phi-{}.usjm", phi.fingerprint())).display()
        );
    }
    Ok(())
}

fn das(config: &Path, channel: &Path, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let ch = ChannelData::read(channel)?;
    let grid = grid_of(&cfg, &ch.probe)?;
    let img = das_beamform(&ch, &grid, &cfg.apodization)?;
    save(&img, out, &provenance("das", &[config, channel])?)?;
    println!("{}: {} x {} DAS image", out.display(), grid.nz, grid.nx);
    Ok(())
}

fn compound_images(images: &[PathBuf], out: &Path) -> Result<()> {
    let imgs = images.iter().map(|p| RfImage::read(p)).collect::<Result<Vec<_>>>()?;
    let sum = compound(&imgs)?;
    let inputs: Vec<&Path> = images.iter().map(PathBuf::as_path).collect();
    save(&sum, out, &provenance("compound", &inputs)?)?;
    println!("{}: {} transmits compounded", out.display(), imgs.len());
    Ok(())
}

fn solve(a: &SolveArgs, cache: Option<&Path>) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    let ch = ChannelData::read(&a.channel)?;
    let y_das = RfImage::read(&a.das)?;
    // the model has to describe the acquisition that was actually recorded
    cfg.probe = ch.probe;
    cfg.angles = vec![ch.tx.angle];
    cfg.num_samples = Some(ch.num_samples);
    let s = &mut cfg.solver;
    if let Some(m) = a.mode {
        s.mode = m.into();
    }
    if let Some(p) = a.preset {
        s.preset = Some(p.into());
    }
    s.gamma_d = a.gamma_d.or(s.gamma_d);
    s.gamma_b = a.gamma_b.or(s.gamma_b);
    s.mu = a.mu.or(s.mu);
    s.beta = a.beta.or(s.beta);
    s.epsilon = a.epsilon.unwrap_or(s.epsilon);
    s.max_iter = a.max_iter.unwrap_or(s.max_iter);
    if let Some(p) = &a.psf {
        cfg.psf = PsfSpec::File { path: p.clone() };
    }
    let stages = cfg.solver.resolve()?;
    let scene = Scene::new(&cfg, cache)?;
    if y_das.grid != scene.grid {
        return Err(Error::Inconsistent(format!(
            "{} was formed on a different grid than the configuration describes",
            a.das.display()
        )));
    }
    let rep = scene.reconstruct(&ch, &y_das, &stages, None)?;

    let mut inputs = vec![a.config.as_path(), a.channel.as_path(), a.das.as_path()];
    if let Some(p) = &a.psf {
        inputs.push(p);
    }
    save_with(&rep.result, &a.out, &provenance("solve", &inputs)?, |m| {
        m["units"] = json!("normalized by the DAS image norm");
    })?;
    if let Some(path) = &a.report {
        let mut v = serde_json::to_value(rep.summary())?;
        drop_wall_time(&mut v);
        write_atomic(path, serde_json::to_string_pretty(&v)?.as_bytes())?;
    }
    let c = rep.config;
    println!(
        "{}: {:?} gamma_d={} gamma_b={} beta={} mu={}, {} iterations, {}, objective {:.6e}",
        a.out.display(),
        c.mode,
        c.gamma_d,
        c.gamma_b,
        c.beta,
        c.mu,
        rep.iterations,
        if rep.converged { "converged" } else { "hit max_iter" },
        rep.final_objective()
    );
    Ok(())
}

/// Wall time is the only nondeterministic field; reports leave it out so
/// repeated runs compare equal.
fn drop_wall_time(v: &mut Value) {
    if let Value::Object(m) = v {
        m.remove("wall_time");
        m.values_mut().for_each(drop_wall_time);
    }
}

enum Picture {
    Rf(RfImage),
    BMode(BModeImage),
}

fn read_picture(path: &Path) -> Result<Picture> {
    let c = read_container(path)?;
    match c.kind {
        Kind::Rfimage => Ok(Picture::Rf(RfImage::from_container(&c, path)?)),
        Kind::Bmode => Ok(Picture::BMode(BModeImage::from_container(&c, path)?)),
        other => Err(Error::KindMismatch {
            path: path.into(),
            expected: "rfimage or bmode",
            found: other.name().into(),
        }),
    }
}

fn as_bmode(p: Picture, dr: f64) -> Result<BModeImage> {
    match p {
        Picture::Rf(x) => bmode(&x, dr),
        Picture::BMode(b) => Ok(b),
    }
}

fn metrics(a: &MetricsArgs) -> Result<()> {
    let picture = read_picture(&a.image)?;
    let phantom = a.phantom.as_deref().map(Phantom::read).transpose()?;
    let rep = match a.kind {
        MetricKind::Points => {
            let Picture::Rf(img) = picture else {
                return Err(Error::Inconsistent("point metrics need an RF image, not B-mode".into()));
            };
            let targets = phantom.as_ref().map(Phantom::points).unwrap_or_default();
            if targets.is_empty() {
                return Err(Error::Inconsistent("point metrics need --phantom with point targets".into()));
            }
            point_metrics(&envelope(&img)?, &targets, a.search)?
        }
        MetricKind::Cyst => {
            let img = as_bmode(picture, a.dr)?;
            let regions = match (a.roi, a.background) {
                (Some(r), Some(b)) => {
                    let bg = Mask::rect(&img.grid, b.z, b.x);
                    let spec = RegionSpec::overlapping(Mask::rect(&img.grid, r.z, r.x), bg.clone())?;
                    if !spec.disjoint {
                        eprintln!("pwjoint: note: ROI and background overlap");
                    }
                    vec![(spec, bg)]
                }
                _ => {
                    let cysts = phantom.as_ref().map(Phantom::cysts).unwrap_or_default();
                    if cysts.is_empty() {
                        return Err(Error::Inconsistent(
                            "cyst metrics need --phantom with a cyst, or --roi and --background".into(),
                        ));
                    }
                    cysts
                        .iter()
                        .map(|&(z, x, r)| RegionSpec::cyst(&img.grid, (z, x), r))
                        .collect::<Result<Vec<_>>>()?
                }
            };
            match &a.reference {
                Some(p) => {
                    let reference = as_bmode(read_picture(p)?, a.dr)?;
                    contrast_metrics(&img, &reference, &regions, a.nbins)?
                }
                None => {
                    let mut rep = MetricsReport::default();
                    for (r, _) in &regions {
                        rep.cnr.push(cnr(&img, r)?);
                        rep.gcnr.push(gcnr(&img, r, a.nbins)?);
                    }
                    rep
                }
            }
        }
    };
    print!("{}", format_table(&[(a.label.clone(), rep.clone())]));
    if let Some(out) = &a.out {
        let v = json!({
            "kind": match a.kind { MetricKind::Points => "points", MetricKind::Cyst => "cyst" },
            "label": a.label,
            "fwhm_units": "mm",
            "cnr_units": "dB",
            "report": rep,
        });
        write_atomic(out, serde_json::to_string_pretty(&v)?.as_bytes())?;
    }
    Ok(())
}

fn export(image: &Path, out: &Path, dr: f64) -> Result<()> {
    let b = as_bmode(read_picture(image)?, dr)?;
    if out.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
        export_pgm(&b, out)
    } else {
        export_png(&b, out)
    }
}

fn compare(config: &Path, out_dir: Option<&Path>, cache: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let out_dir = output_dir(out_dir, &cfg)?;
    let (scene, obs, rows) = compare_modes(&cfg, cache)?;
    fs::create_dir_all(out_dir)?;
    let prov = provenance("compare", &[config])?;
    save(&obs.phantom, &out_dir.join("phantom.usjd"), &prov)?;
    save(obs.channel(), &out_dir.join("channel.usjd"), &prov)?;
    save_with(&scene.psf, &out_dir.join("psf.usjd"), &prov, |m| {
        m["spacing"] = json!({ "dz": scene.grid.dz, "dx": scene.grid.dx });
    })?;
    let dr = cfg.metrics.dynamic_range;
    let mut methods = serde_json::Map::new();
    for r in &rows {
        save(&r.image, &out_dir.join(format!("{}.usjd", r.name)), &prov)?;
        export_png(&bmode(&r.image, dr)?, &out_dir.join(format!("{}.png", r.name)))?;
        let mut solver = r.report.as_ref().map(|s| serde_json::to_value(s.summary())).transpose()?;
        if let Some(v) = solver.as_mut() {
            drop_wall_time(v);
        }
        methods.insert(r.name.clone(), json!({ "metrics": r.metrics, "solver": solver }));
    }
    let table = format_table(
        &rows
            .iter()
            .map(|r| (r.name.clone(), r.metrics.clone()))
            .collect::<Vec<_>>(),
    );
    write_atomic(&out_dir.join("table.txt"), table.as_bytes())?;
    let report = json!({ "fwhm_units": "mm", "cnr_units": "dB", "methods": methods });
    write_atomic(&out_dir.join("report.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
    print!("{table}");
    Ok(())
}

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::anyhow;
use log::{info, warn};
use nalgebra::Point3;
use serde::Serialize;
use serde_json::json;

use shapebp::baseline::{extract_instances, ModelKind, RansacConfig};
use shapebp::eval::{bench_inad, metrics, BenchConfig, MetricsReport};
use shapebp::io::{
    load_cloud_with, load_labels, save_cloud, save_colored_ply, save_labels, CloudFormat, LoadOptions, NonFinitePolicy,
};
use shapebp::synth::{gen_plane, gen_scene, SceneSpec};
use shapebp::tasks::{
    classify_binary, label_edges, ShapeAnalysis, DEFAULT_NORMAL_RADIUS_RATIO, DEFAULT_R_CLASSIFY, DEFAULT_R_EDGE,
};
use shapebp::{
    back_project, build_histogram, compute_inad_field, estimate_all_normals, BinLayout, InadParams, KdTree, LabelMask,
    LikelihoodField, NormalField, NormalParams, PointCloud, Rejection, ShapeHistogram, SurfaceClass,
};

use crate::args::{
    BackprojectArgs, BenchArgs, BinArgs, Cli, Command, EvalArgs, HistogramArgs, InputArgs, RansacArgs, ShapeArgs,
    SynthArgs, TaskArgs,
};
use crate::{CliResult, Failure};

pub fn run(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Histogram(a) => histogram(a),
        Command::Backproject(a) => backproject(a),
        Command::Classify(a) => task(a, Task::Classify),
        Command::Edges(a) => task(a, Task::Edges),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
        Command::Ransac(a) => ransac(a),
    }
}

fn usage(message: impl std::fmt::Display) -> Failure {
    Failure::Usage(anyhow!("{message}"))
}

/// Any failure while reading user-supplied input is an input error.
fn input_error(path: &Path, e: shapebp::Error) -> Failure {
    Failure::Usage(anyhow::Error::new(e).context(format!("cannot read {}", path.display())))
}

fn output_error(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(anyhow!("cannot write {}: {e}", path.display()))
}

fn load_cloud_from(path: &Path, drop_non_finite: bool) -> CliResult<PointCloud> {
    let format = CloudFormat::from_path(path).map_err(|e| input_error(path, e))?;
    let options = LoadOptions {
        non_finite: if drop_non_finite {
            NonFinitePolicy::Drop
        } else {
            NonFinitePolicy::Reject
        },
    };
    let cloud = load_cloud_with(path, format, options).map_err(|e| input_error(path, e))?;
    cloud.ensure_non_empty().map_err(|e| input_error(path, e))?;
    info!("loaded {} points from {}", cloud.len(), path.display());
    Ok(cloud)
}

fn load_input(args: &InputArgs) -> CliResult<PointCloud> {
    load_cloud_from(&args.input, args.drop_non_finite)
}

fn load_histogram(path: &Path) -> CliResult<ShapeHistogram> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    ShapeHistogram::from_json(&text).map_err(|e| input_error(path, e))
}

fn load_mask(path: &Path) -> CliResult<LabelMask> {
    load_labels(path).map_err(|e| input_error(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text).map_err(|e| output_error(path, e))
}

/// Writes `text` to `path`, or to stdout when no path is given.
fn emit(path: Option<&Path>, text: &str) -> CliResult {
    match path {
        Some(p) => write_text(p, text),
        None => std::io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Runtime(anyhow!("cannot write to stdout: {e}"))),
    }
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".config.json");
    PathBuf::from(s)
}

/// Writes the fully resolved configuration next to `out`. The content is a
/// function of the arguments only, so identical runs give identical files.
fn write_sidecar(out: &Path, command: &str, arguments: &impl Serialize, resolved: serde_json::Value) -> CliResult {
    let record = json!({
        "tool": "shapebp",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "arguments": arguments,
        "resolved": resolved,
    });
    let text = serde_json::to_string_pretty(&record).expect("config serializes") + "\n";
    write_text(&sidecar_path(out), &text)
}

fn save_cloud_to(cloud: &PointCloud, path: &Path) -> CliResult {
    let format = CloudFormat::from_path(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    save_cloud(cloud, path, format).map_err(|e| match e {
        shapebp::Error::Io { .. } => output_error(path, e),
        other => Failure::from(other),
    })
}

fn save_mask(mask: &LabelMask, path: &Path) -> CliResult {
    save_labels(mask, path).map_err(|e| output_error(path, e))
}

/// Blue (score 0) to green (score 1); gray where invalid.
fn likelihood_colors(field: &LikelihoodField) -> Vec<[u8; 3]> {
    field
        .scores()
        .iter()
        .map(|s| match s {
            Some(v) => {
                let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                [0, g, 255 - g]
            }
            None => [128, 128, 128],
        })
        .collect()
}

fn label_colors(mask: &LabelMask) -> Vec<[u8; 3]> {
    mask.labels()
        .iter()
        .map(|c| match c {
            SurfaceClass::Planar => [0, 200, 0],
            SurfaceClass::Curved => [0, 0, 255],
            SurfaceClass::Edge => [255, 0, 0],
            SurfaceClass::Unlabeled => [128, 128, 128],
        })
        .collect()
}

fn save_ply(cloud: &PointCloud, colors: &[[u8; 3]], path: &Path) -> CliResult {
    save_colored_ply(cloud, colors, path).map_err(|e| output_error(path, e))
}

fn check_positive(name: &str, v: f64) -> CliResult {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(usage(format!("--{name} must be positive, got {v}")))
    }
}

/// Normal and INAD parameters after defaults are applied.
#[derive(Debug, Clone, Copy, Serialize)]
struct Resolved {
    radius: f64,
    normal_radius: f64,
    outlier_rate: f64,
    rejection: Rejection,
    min_neighbors: usize,
    viewpoint: Option<[f64; 3]>,
    use_stored_normals: bool,
}

impl Resolved {
    fn from_args(shape: &ShapeArgs, default_radius: Option<f64>) -> CliResult<Self> {
        let radius = shape
            .radius
            .or(default_radius)
            .ok_or_else(|| usage("--radius is required"))?;
        check_positive("radius", radius)?;
        let normal_radius = shape.normal_radius.unwrap_or(radius * DEFAULT_NORMAL_RADIUS_RATIO);
        check_positive("normal-radius", normal_radius)?;
        check_positive("outlier-rate", shape.outlier_rate)?;
        if shape.max_passes == 0 {
            return Err(usage("--max-passes must be at least 1"));
        }
        Ok(Self {
            radius,
            normal_radius,
            outlier_rate: shape.outlier_rate,
            rejection: if shape.single_pass {
                Rejection::SinglePass
            } else {
                Rejection::UntilStable {
                    max_passes: shape.max_passes,
                }
            },
            min_neighbors: shape.min_neighbors,
            viewpoint: shape.viewpoint,
            use_stored_normals: shape.use_stored_normals,
        })
    }

    fn inad(&self) -> InadParams {
        InadParams::new(self.radius)
            .with_outlier_rate(self.outlier_rate)
            .with_rejection(self.rejection)
    }

    fn normals(&self, cloud: &PointCloud) -> NormalParams {
        let viewpoint = self
            .viewpoint
            .map(Point3::from)
            .unwrap_or_else(|| cloud.sensor_origin());
        NormalParams::new(self.normal_radius)
            .with_viewpoint(viewpoint)
            .with_min_neighbors(self.min_neighbors)
    }

    fn analyze(&self, cloud: &PointCloud, source: &Path) -> CliResult<ShapeAnalysis> {
        let start = Instant::now();
        let index = KdTree::build(cloud)?;
        let normals = if self.use_stored_normals {
            NormalField::from_cloud(cloud)
                .ok_or_else(|| usage(format!("{} has no stored normals", source.display())))?
        } else {
            estimate_all_normals(cloud, &index, &self.normals(cloud))?
        };
        let inad = compute_inad_field(cloud, &normals, &index, &self.inad())?;
        info!(
            "{}: {} valid normals, {} valid INAD pairs of {} points ({:.2} s)",
            source.display(),
            normals.valid_count(),
            inad.valid_count(),
            cloud.len(),
            start.elapsed().as_secs_f64()
        );
        if inad.valid_count() == 0 {
            warn!(
                "{}: no point has a valid INAD pair at r = {}; the radius may be too small for the sampling density",
                source.display(),
                self.radius
            );
        }
        Ok(ShapeAnalysis { normals, inad })
    }
}

fn layout(bins: &BinArgs) -> CliResult<BinLayout> {
    let layout = BinLayout::new(bins.bins_mu, bins.bins_sigma).with_ranges(bins.mu_max, bins.sigma_max);
    layout.validate()?;
    Ok(layout)
}

fn synth(args: &SynthArgs) -> CliResult {
    let mut spec = SceneSpec::load(&args.spec).map_err(|e| input_error(&args.spec, e))?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(noise) = args.noise {
        spec.noise_sigma = noise;
    }
    let scene = gen_scene(&spec)?;
    let labels_path = args.labels.clone().unwrap_or_else(|| args.out.with_extension("labels"));
    save_cloud_to(&scene.cloud, &args.out)?;
    save_mask(&scene.labels, &labels_path)?;
    info!(
        "wrote {} points to {} ({} planar, {} curved, {} edge)",
        scene.len(),
        args.out.display(),
        scene.labels.count(SurfaceClass::Planar),
        scene.labels.count(SurfaceClass::Curved),
        scene.labels.count(SurfaceClass::Edge)
    );
    write_sidecar(
        &args.out,
        "synth",
        args,
        json!({
            "spec": spec,
            "labels": labels_path,
            "viewpoint": [scene.viewpoint.x, scene.viewpoint.y, scene.viewpoint.z],
            "points": scene.len(),
        }),
    )
}

fn histogram(args: &HistogramArgs) -> CliResult {
    let cloud = load_input(&args.input)?;
    let resolved = Resolved::from_args(&args.shape, None)?;
    let layout = layout(&args.bins)?;
    let analysis = resolved.analyze(&cloud, &args.input.input)?;
    let hist = build_histogram(&analysis.inad, layout)?;
    write_text(&args.out, &hist.to_json())?;
    if let Some(path) = &args.inad_csv {
        write_text(path, &analysis.inad.to_csv())?;
    }
    info!(
        "histogram of {} samples, peak bin {:?}\n{}",
        hist.sample_count(),
        hist.peak(),
        hist.render_table()
    );
    write_sidecar(
        &args.out,
        "histogram",
        args,
        json!({ "shape": resolved, "layout": layout }),
    )
}

fn backproject(args: &BackprojectArgs) -> CliResult {
    let hist = load_histogram(&args.histogram)?;
    let cloud = load_input(&args.input)?;
    // a radius different from the histogram's is allowed; back_project warns
    let resolved = Resolved::from_args(&args.shape, Some(hist.source_r()))?;
    let analysis = resolved.analyze(&cloud, &args.input.input)?;
    let scores = back_project(&hist, &analysis.inad);
    emit(args.out.as_deref(), &scores.to_csv())?;
    if let Some(ply) = &args.ply {
        save_ply(&cloud, &likelihood_colors(&scores), ply)?;
    }
    info!(
        "{} valid scores, mean {:.4}",
        scores.valid_count(),
        scores.mean().unwrap_or(f64::NAN)
    );
    if let Some(out) = &args.out {
        write_sidecar(
            out,
            "backproject",
            args,
            json!({ "shape": resolved, "layout": hist.layout() }),
        )?;
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
enum Task {
    Classify,
    Edges,
}

impl Task {
    fn name(self) -> &'static str {
        match self {
            Task::Classify => "classify",
            Task::Edges => "edges",
        }
    }

    fn default_radius(self) -> f64 {
        match self {
            Task::Classify => DEFAULT_R_CLASSIFY,
            Task::Edges => DEFAULT_R_EDGE,
        }
    }

    fn classes(self) -> [SurfaceClass; 2] {
        match self {
            Task::Classify => [SurfaceClass::Planar, SurfaceClass::Curved],
            Task::Edges => [SurfaceClass::Edge, SurfaceClass::Planar],
        }
    }
}

fn task(args: &TaskArgs, kind: Task) -> CliResult {
    let total = Instant::now();
    if !(args.threshold > 0.0 && args.threshold < 1.0) {
        return Err(usage(format!(
            "--threshold must lie strictly between 0 and 1, got {}",
            args.threshold
        )));
    }
    let resolved = Resolved::from_args(&args.shape, Some(kind.default_radius()))?;
    let truth = args.truth.as_deref().map(load_mask).transpose()?;
    let cloud = load_input(&args.input)?;
    if let Some(t) = &truth {
        t.ensure_len(cloud.len())
            .map_err(|e| input_error(args.truth.as_deref().unwrap_or(Path::new("")), e))?;
    }

    let sample_start = Instant::now();
    let hist = match (&args.histogram, &args.sample) {
        (Some(path), _) => load_histogram(path)?,
        (None, Some(path)) => {
            let sample = load_cloud_from(path, args.input.drop_non_finite)?;
            let analysis = resolved.analyze(&sample, path)?;
            build_histogram(&analysis.inad, layout(&args.bins)?)?
        }
        (None, None) => return Err(usage("either --histogram or --sample is required")),
    };
    let sample_secs = sample_start.elapsed().as_secs_f64();

    let test_start = Instant::now();
    let analysis = resolved.analyze(&cloud, &args.input.input)?;
    let planar = back_project(&hist, &analysis.inad);
    let labels = match kind {
        Task::Classify => classify_binary(&planar, args.threshold)?,
        Task::Edges => label_edges(&planar, args.threshold)?,
    };
    let test_secs = test_start.elapsed().as_secs_f64();

    save_mask(&labels, &args.out)?;
    if let Some(path) = &args.scores {
        write_text(path, &planar.to_csv())?;
    }
    if let Some(path) = &args.ply {
        save_ply(&cloud, &label_colors(&labels), path)?;
    }
    info!(
        "{}: {} planar, {} curved, {} edge, {} unlabeled",
        kind.name(),
        labels.count(SurfaceClass::Planar),
        labels.count(SurfaceClass::Curved),
        labels.count(SurfaceClass::Edge),
        labels.count(SurfaceClass::Unlabeled)
    );

    if let Some(truth) = &truth {
        let mut report = metrics(&labels, truth, &kind.classes())?
            .with_parameter("task", kind.name())
            .with_parameter("r", resolved.radius)
            .with_parameter("normal_r", resolved.normal_radius)
            .with_parameter("c", resolved.outlier_rate)
            .with_parameter("k_mu", hist.k_mu())
            .with_parameter("k_sigma", hist.k_sigma())
            .with_parameter("tau", args.threshold);
        if args.timings {
            report = report
                .with_timing("sample", sample_secs)
                .with_timing("test", test_secs)
                .with_timing("total", total.elapsed().as_secs_f64());
        }
        eprint!("{}", report.render_table());
        if let Some(path) = &args.report {
            write_text(path, &(report.to_json() + "\n"))?;
        }
    }
    write_sidecar(
        &args.out,
        kind.name(),
        args,
        json!({ "shape": resolved, "layout": hist.layout(), "tau": args.threshold }),
    )
}

fn parse_classes(names: &[String]) -> CliResult<Vec<SurfaceClass>> {
    names
        .iter()
        .map(|n| {
            let class: SurfaceClass = n.parse().map_err(|e: shapebp::Error| usage(e))?;
            if class == SurfaceClass::Unlabeled {
                return Err(usage("unlabeled cannot be scored"));
            }
            Ok(class)
        })
        .collect()
}

fn eval(args: &EvalArgs) -> CliResult {
    let classes = parse_classes(&args.classes)?;
    let pred = load_mask(&args.pred)?;
    let truth = load_mask(&args.truth)?;
    let report: MetricsReport = metrics(&pred, &truth, &classes).map_err(|e| input_error(&args.pred, e))?;
    eprint!("{}", report.render_table());
    emit(args.out.as_deref(), &(report.to_json() + "\n"))?;
    if let Some(out) = &args.out {
        write_sidecar(out, "eval", args, json!({ "classes": classes }))?;
    }
    Ok(())
}

fn bench(args: &BenchArgs) -> CliResult {
    check_positive("normal-radius", args.normal_radius)?;
    check_positive("outlier-rate", args.outlier_rate)?;
    let (cloud, source) = match &args.input {
        Some(path) => (load_cloud_from(path, false)?, path.display().to_string()),
        None => {
            check_positive("resolution", args.resolution)?;
            let scene = gen_plane(args.grid, args.grid, args.resolution, args.noise, args.seed)?;
            (scene.cloud, format!("synthetic {0}x{0} plane", args.grid))
        }
    };
    let index = KdTree::build(&cloud)?;
    let normals = estimate_all_normals(
        &cloud,
        &index,
        &NormalParams::new(args.normal_radius).with_viewpoint(cloud.sensor_origin()),
    )?;
    let config = BenchConfig {
        k_list: args.k_list.clone(),
        repetitions: args.repetitions,
        sample_points: (args.sample_points > 0).then_some(args.sample_points),
        outlier_rate: args.outlier_rate,
        rejection: if args.single_pass {
            Rejection::SinglePass
        } else {
            Rejection::default()
        },
        parallel: args.parallel,
    };
    info!("benchmarking on {source} ({} points)", cloud.len());
    let report = if args.parallel {
        bench_inad(&cloud, &normals, &index, &config)
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Failure::Runtime(e.into()))?
            .install(|| bench_inad(&cloud, &normals, &index, &config))
    }
    .map_err(|e| match e {
        shapebp::Error::InvalidParameter(_) => Failure::Usage(e.into()),
        other => Failure::from(other),
    })?;
    match &args.out {
        Some(path) => {
            eprint!("{}", report.render_table());
            write_text(path, &(report.to_json() + "\n"))?;
            write_sidecar(path, "bench", args, json!({ "config": config, "points": cloud.len() }))
        }
        None => emit(None, &report.render_table()),
    }
}

fn ransac(args: &RansacArgs) -> CliResult {
    let model: ModelKind = args.model.parse().map_err(|e: shapebp::Error| usage(e))?;
    let config = RansacConfig {
        model,
        inlier_threshold: args.inlier_threshold,
        max_iterations: args.max_iterations,
        min_inliers: args.min_inliers,
        seed: args.seed,
        radius_limits: args.radius_min.zip(args.radius_max).map(|(a, b)| [a, b]),
    };
    config.validate()?;
    let truth = args.truth.as_deref().map(load_mask).transpose()?;
    let cloud = load_input(&args.input)?;
    if let Some(t) = &truth {
        t.ensure_len(cloud.len())
            .map_err(|e| input_error(args.truth.as_deref().unwrap_or(Path::new("")), e))?;
    }
    let normals = match model {
        ModelKind::Plane => None,
        ModelKind::Cylinder if args.use_stored_normals => Some(
            NormalField::from_cloud(&cloud)
                .ok_or_else(|| usage(format!("{} has no stored normals", args.input.input.display())))?,
        ),
        ModelKind::Cylinder => {
            check_positive("normal-radius", args.normal_radius)?;
            let viewpoint = args
                .viewpoint
                .map(Point3::from)
                .unwrap_or_else(|| cloud.sensor_origin());
            let index = KdTree::build(&cloud)?;
            let params = NormalParams::new(args.normal_radius)
                .with_viewpoint(viewpoint)
                .with_min_neighbors(args.min_neighbors);
            Some(estimate_all_normals(&cloud, &index, &params)?)
        }
    };
    let extraction = extract_instances(&cloud, normals.as_ref(), &config, args.instances)?;
    if extraction.exhausted {
        warn!(
            "found {} of {} requested instances",
            extraction.instances.len(),
            args.instances
        );
    }
    let (positive, negative) = match model {
        ModelKind::Cylinder => (SurfaceClass::Curved, SurfaceClass::Planar),
        ModelKind::Plane => (SurfaceClass::Planar, SurfaceClass::Curved),
    };
    let labels = extraction.to_mask(cloud.len(), positive, negative);
    save_mask(&labels, &args.out)?;
    if let Some(path) = &args.models {
        let models: Vec<_> = extraction
            .instances
            .iter()
            .map(|f| json!({ "model": f.model, "inliers": f.inliers.len() }))
            .collect();
        let text = serde_json::to_string_pretty(&json!({ "instances": models, "exhausted": extraction.exhausted }))
            .expect("models serialize");
        write_text(path, &(text + "\n"))?;
    }
    if let Some(truth) = &truth {
        let report = metrics(&labels, truth, &[positive, negative])?
            .with_parameter("model", model)
            .with_parameter("instances", args.instances)
            .with_parameter("inlier_threshold", args.inlier_threshold)
            .with_parameter("max_iterations", args.max_iterations)
            .with_parameter("seed", args.seed);
        eprint!("{}", report.render_table());
        if let Some(path) = &args.report {
            write_text(path, &(report.to_json() + "\n"))?;
        }
    }
    write_sidecar(&args.out, "ransac", args, json!({ "config": config }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn likelihood_ramp_endpoints() {
        let f = LikelihoodField::new(vec![Some(0.0), Some(1.0), None, Some(0.5)], 0.01);
        let c = likelihood_colors(&f);
        assert_eq!(c[0], [0, 0, 255]);
        assert_eq!(c[1], [0, 255, 0]);
        assert_eq!(c[2], [128, 128, 128]);
        assert_eq!(c[3][1] as u16 + c[3][2] as u16, 255);
    }

    #[test]
    fn sidecar_is_appended_to_the_full_name() {
        assert_eq!(
            sidecar_path(Path::new("a/b.labels")),
            PathBuf::from("a/b.labels.config.json")
        );
    }
}

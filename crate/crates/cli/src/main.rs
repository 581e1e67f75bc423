//! `seawatch` command-line front end.
//!
//! Exit status: 0 on success, 2 for invalid input or configuration, 3 for
//! I/O failures. Output files are written only when a command succeeds.

mod output;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use seawatch::anomaly::{detect, AnomalyConfig, AnomalyReport};
use seawatch::category::VesselCategory;
use seawatch::classifier::{train, FeatureRecord, Network, TrainConfig};
use seawatch::geo::LocalFrame;
use seawatch::io::{
    assemble_tracks, parse_ais, parse_detections, parse_track_points, parse_truth, read_jsonl, write_ais,
    write_detections, write_jsonl, write_track_points, write_truth, AisRecord, Detection, DetectionBody, Mmsi, Parsed, TrackPoint, TruthPoint,
};
use seawatch::metrics::{evaluate, label_anomaly_reports, roc_curve};
use seawatch::sim::{emit_ais, emit_detections, feature_dataset, generate_truth, ScenarioConfig};
use seawatch::tracker::{build_scans, parse_sensor_config, route_model_set, NoiseSpec, SensorSpec, Tracker, TrackerConfig};
use seawatch::traffic::{
    build_graph, cluster_waypoints, detect_waypoints, prune_and_merge, ClusterParams, Region, TrafficGraph,
    WaypointConfig,
};
use seawatch::{Error, Result};

use output::{open, read, Staged};

#[derive(Parser)]
#[command(name = "seawatch", version, about = "Maritime surveillance toolkit: simulation, traffic graphs, tracking, anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate ground truth, AIS and sensor detections from a scenario file.
    Simulate(SimulateArgs),
    /// Extract a maritime traffic graph from historical AIS.
    ExtractGraph(ExtractArgs),
    /// Run the multitarget tracker over AIS and sensor detections.
    Track(TrackArgs),
    /// Test AIS tracks for deviations from their route's nominal velocity.
    DetectAnomalies(AnomalyArgs),
    /// Train the extent-based vessel classifier.
    TrainClassifier(TrainArgs),
    /// Classify vessels from extent features with a trained model.
    Classify(ClassifyArgs),
    /// Score tracker output against ground truth.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Spacing of written truth samples, s; 0 keeps every integration step.
    /// First and last samples of each vessel are always kept.
    #[arg(long, default_value_t = 10.0)]
    truth_every_s: f64,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    ais: PathBuf,
    /// Area of interest (`{"polygon": [[lat, lon], ...], "margin_m": ...}`).
    #[arg(long)]
    region: Option<PathBuf>,
    /// Split tracks at reporting gaps longer than this, s.
    #[arg(long, default_value_t = 3600.0)]
    gap_s: f64,
    /// Samples per side of the change-point window.
    #[arg(long, default_value_t = 10)]
    window: usize,
    #[arg(long, default_value_t = 8.0)]
    threshold: f64,
    #[arg(long, default_value_t = 2000.0)]
    eps: f64,
    #[arg(long, default_value_t = 5)]
    min_pts: usize,
    #[arg(long, default_value_t = 2)]
    w_min: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrackArgs {
    #[arg(long)]
    ais: Option<PathBuf>,
    #[arg(long)]
    detections: Option<PathBuf>,
    /// Sensor models keyed by sensor id; must include the AIS sensor when AIS
    /// is given.
    #[arg(long)]
    sensors: PathBuf,
    /// Traffic graph enabling route-following motion models.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Tracker configuration (JSON); defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Per-scan summary (JSON Lines).
    #[arg(long)]
    scan_log: Option<PathBuf>,
}

#[derive(Args)]
struct AnomalyArgs {
    #[arg(long)]
    ais: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    /// Target false-alarm rate per window.
    #[arg(long, default_value_t = 0.05)]
    far: f64,
    #[arg(long, default_value_t = 30)]
    window: usize,
    #[arg(long, default_value_t = 10)]
    stride: usize,
    /// Monte-Carlo runs for per-window thresholds; 0 uses the chi-square quantile.
    #[arg(long, default_value_t = 0)]
    mc_runs: usize,
    #[arg(long, default_value_t = 5000.0)]
    gate_m: f64,
    /// Nominal OU reversion rate, 1/s.
    #[arg(long, default_value_t = 1e-3)]
    theta: f64,
    /// Nominal OU noise intensity, m/s/sqrt(s).
    #[arg(long, default_value_t = 0.05)]
    sigma: f64,
    #[arg(long, default_value_t = 3600.0)]
    gap_s: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Labeled features (JSON Lines with `class`).
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    data: Option<PathBuf>,
    /// Train on this many samples from the built-in extent generator instead.
    #[arg(long)]
    synthetic: Option<usize>,
    #[arg(long, default_value_t = 40)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss as CSV.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    tracks: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Scan log from `track`; scans without estimates then count as misses.
    #[arg(long)]
    scan_log: Option<PathBuf>,
    /// GOSPA cutoff, m.
    #[arg(long, default_value_t = 500.0)]
    c: f64,
    /// GOSPA order.
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    /// Anomaly reports to score against the injected deviations in `--scenario`.
    #[arg(long, requires = "scenario")]
    anomalies: Option<PathBuf>,
    #[arg(long, requires = "anomalies")]
    scenario: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::ExtractGraph(a) => extract_graph(a),
        Command::Track(a) => track(a),
        Command::DetectAnomalies(a) => detect_anomalies(a),
        Command::TrainClassifier(a) => train_classifier(a),
        Command::Classify(a) => classify(a),
        Command::Evaluate(a) => evaluate_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("seawatch: {e}");
            ExitCode::from(match e {
                Error::Io(_) => 3,
                _ => 2,
            })
        }
    }
}

/// Keeps the good records and reports rejected lines on stderr.
fn accept<T>(path: &Path, parsed: Parsed<T>) -> Vec<T> {
    for d in &parsed.diagnostics {
        eprintln!("warning: {}: {d}", path.display());
    }
    parsed.records
}

fn jsonl_bytes<T: Serialize>(items: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, items)?;
    Ok(buf)
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut buf = serde_json::to_vec_pretty(value)?;
    buf.push(b'\n');
    Ok(buf)
}

fn read_ais(path: &Path) -> Result<Vec<AisRecord>> {
    Ok(accept(path, parse_ais(open(path)?)?))
}

fn read_graph(path: &Path) -> Result<TrafficGraph> {
    TrafficGraph::from_json(&read(path)?)
}

fn finish(staged: Staged, start: Instant) -> Result<()> {
    let paths: Vec<String> = staged.paths().map(|p| p.display().to_string()).collect();
    staged.commit()?;
    eprintln!("wrote {} in {:.2} s", paths.join(", "), start.elapsed().as_secs_f64());
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let start = Instant::now();
    let mut cfg: ScenarioConfig = serde_json::from_str(&read(&a.config)?)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let truth = generate_truth(&cfg)?;
    let mut staged = Staged::default();
    let mut buf = Vec::new();
    write_truth(&mut buf, &thin_truth(truth.points()?, a.truth_every_s))?;
    staged.add(a.out_dir.join("truth.jsonl"), buf);

    let mut sensors: BTreeMap<String, SensorSpec> = cfg.sensors.iter().map(|s| (s.sensor_id.clone(), s.model.clone())).collect();
    if let Some(ais) = &cfg.ais {
        let mut buf = Vec::new();
        let records = emit_ais(&truth, &cfg)?;
        write_ais(&mut buf, &records)?;
        staged.add(a.out_dir.join("ais.jsonl"), buf);
        eprintln!("{} AIS messages", records.len());
        // Every AIS message is its own scan, so a given vessel appears in
        // roughly one message out of each round of reports.
        let pd = (1.0 / cfg.vessels.len().max(1) as f64).min(0.9);
        sensors.entry(TrackerConfig::default().ais_sensor).or_insert(SensorSpec {
            pd,
            clutter_rate: 0.0,
            fov: None,
            noise: NoiseSpec::Geofix {
                sigma_m: Some(ais.position_noise_m.max(10.0)),
                cov: None,
            },
            confusion: None,
            label_error: Some(ais.mislabel.max(0.01)),
            velocity_sigma_mps: Some(0.5),
            new_target_density: None,
            birth_existence: Some(0.9),
        });
    }
    if !cfg.sensors.is_empty() {
        let mut buf = Vec::new();
        let dets = emit_detections(&truth, &cfg)?;
        write_detections(&mut buf, &dets)?;
        staged.add(a.out_dir.join("detections.jsonl"), buf);
        eprintln!("{} sensor detections", dets.len());
    }
    if !sensors.is_empty() {
        staged.add(a.out_dir.join("sensors.json"), json_bytes(&sensors)?);
    }
    finish(staged, start)
}

/// Drops truth samples closer than `every` seconds to the last kept sample
/// of the same vessel. The final sample of each vessel is kept too.
fn thin_truth(points: Vec<TruthPoint>, every: f64) -> Vec<TruthPoint> {
    if every <= 0.0 {
        return points;
    }
    let mut last_t: BTreeMap<Mmsi, f64> = BTreeMap::new();
    let mut final_idx: BTreeMap<Mmsi, usize> = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        final_idx.insert(p.mmsi, i);
    }
    points
        .into_iter()
        .enumerate()
        .filter(|(i, p)| {
            let keep = last_t.get(&p.mmsi).is_none_or(|&t| p.t - t >= every - 1e-9) || final_idx[&p.mmsi] == *i;
            if keep {
                last_t.insert(p.mmsi, p.t);
            }
            keep
        })
        .map(|(_, p)| p)
        .collect()
}

fn extract_graph(a: ExtractArgs) -> Result<()> {
    let start = Instant::now();
    let ais = read_ais(&a.ais)?;
    let boundary = match &a.region {
        Some(p) => Some(serde_json::from_str::<Region>(&read(p)?)?),
        None => None,
    };
    let assembly = assemble_tracks(&ais, a.gap_s)?;
    let wcfg = WaypointConfig {
        window: a.window,
        threshold: a.threshold,
        boundary,
        ..Default::default()
    };
    let mut waypoints = Vec::new();
    for (i, t) in assembly.tracks.iter().enumerate() {
        if t.len() >= 2 {
            waypoints.extend(detect_waypoints(t, i, &wcfg)?);
        }
    }
    let clustering = cluster_waypoints(
        &waypoints,
        &ClusterParams {
            eps: a.eps,
            min_pts: a.min_pts,
            course_scale_m_per_deg: None,
        },
    )?;
    let graph = prune_and_merge(&build_graph(&assembly.tracks, &clustering)?, a.w_min)?;
    eprintln!(
        "{} tracks, {} waypoints, {} clusters ({} noise), graph: {} nodes, {} edges",
        assembly.tracks.len(),
        waypoints.len(),
        clustering.clusters.len(),
        clustering.noise.len(),
        graph.nodes.len(),
        graph.edges.len()
    );
    let mut staged = Staged::default();
    staged.add(&a.out, format!("{}\n", graph.to_json()?).into_bytes());
    finish(staged, start)
}

#[derive(Serialize)]
struct ScanLogLine<'a> {
    t: f64,
    sensor_id: &'a str,
    n_measurements: usize,
    converged: bool,
    iterations: usize,
    births: usize,
    n_confirmed: usize,
}

#[derive(serde::Deserialize)]
struct ScanTime {
    t: f64,
}

fn track(a: TrackArgs) -> Result<()> {
    let start = Instant::now();
    if a.ais.is_none() && a.detections.is_none() {
        return Err(Error::Validation("track needs --ais and/or --detections".into()));
    }
    let ais = match &a.ais {
        Some(p) => read_ais(p)?,
        None => Vec::new(),
    };
    let detections: Vec<Detection> = match &a.detections {
        Some(p) => accept(p, parse_detections(open(p)?)?),
        None => Vec::new(),
    };
    let sensors = parse_sensor_config(&read(&a.sensors)?)?;
    let mut cfg: TrackerConfig = match &a.config {
        Some(p) => serde_json::from_str(&read(p)?)?,
        None => TrackerConfig::default(),
    };
    if let Some(n) = a.particles {
        cfg.n_particles = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let graph = a.graph.as_deref().map(read_graph).transpose()?;
    let frame = match &graph {
        Some(g) => g.frame(),
        None => LocalFrame::centered_on(
            ais.iter()
                .map(|r| r.pos)
                .chain(detections.iter().map(|d| match &d.body {
                    DetectionBody::GeoFix(p) => *p,
                    DetectionBody::RangeBearing { sensor, .. } => *sensor,
                })),
        )
        .ok_or_else(|| Error::Validation("no input positions".into()))?,
    };
    let models = match &graph {
        Some(g) if !g.edges.is_empty() => Some(route_model_set(g, cfg.route_theta, cfg.route_sigma, cfg.ncv_q, cfg.stickiness)?),
        _ => None,
    };
    let scans = build_scans(&ais, &detections, &frame, &cfg.ais_sensor);
    let mut tracker = Tracker::new(cfg, &sensors, frame, models)?;
    let mut points: Vec<TrackPoint> = Vec::new();
    let mut log = Vec::new();
    for scan in &scans {
        let report = tracker.process(scan)?;
        for e in &report.estimates {
            points.push(e.to_point(&frame)?);
        }
        log.push(ScanLogLine {
            t: report.t,
            sensor_id: &scan.sensor_id,
            n_measurements: scan.measurements.len(),
            converged: report.converged,
            iterations: report.iterations,
            births: report.births,
            n_confirmed: report.estimates.len(),
        });
    }
    eprintln!("{} scans, {} track points", scans.len(), points.len());
    let mut staged = Staged::default();
    let mut buf = Vec::new();
    write_track_points(&mut buf, &points)?;
    staged.add(&a.out, buf);
    if let Some(p) = &a.scan_log {
        staged.add(p, jsonl_bytes(&log)?);
    }
    finish(staged, start)
}

fn detect_anomalies(a: AnomalyArgs) -> Result<()> {
    let start = Instant::now();
    let ais = read_ais(&a.ais)?;
    let graph = read_graph(&a.graph)?;
    let cfg = AnomalyConfig {
        window: a.window,
        stride: a.stride,
        threshold: None,
        target_far: a.far,
        mc_runs: a.mc_runs,
        gate_m: a.gate_m,
        theta: a.theta,
        sigma: a.sigma,
        seed: a.seed,
    };
    cfg.validate()?;
    let assembly = assemble_tracks(&ais, a.gap_s)?;
    let mut reports: Vec<AnomalyReport> = Vec::new();
    for t in &assembly.tracks {
        reports.extend(detect(t, &graph, &cfg)?);
    }
    let flagged = reports.iter().filter(|r| r.decision == seawatch::anomaly::Decision::Anomalous).count();
    eprintln!("{} windows over {} tracks, {flagged} anomalous", reports.len(), assembly.tracks.len());
    let mut staged = Staged::default();
    staged.add(&a.out, jsonl_bytes(&reports)?);
    finish(staged, start)
}

fn train_classifier(a: TrainArgs) -> Result<()> {
    let start = Instant::now();
    let data = match (&a.data, a.synthetic) {
        (Some(p), _) => {
            let records: Vec<FeatureRecord> = read_jsonl(open(p)?)?;
            records
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let class = r
                        .class
                        .ok_or_else(|| Error::Validation(format!("{}: record {} has no class", p.display(), i + 1)))?;
                    Ok((r.features()?, class))
                })
                .collect::<Result<Vec<_>>>()?
        }
        (None, Some(n)) => feature_dataset(n, &mut ChaCha8Rng::seed_from_u64(a.seed)),
        (None, None) => unreachable!("clap requires --data or --synthetic"),
    };
    let cfg = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        batch: a.batch,
        seed: a.seed,
    };
    let (net, curve) = train(Network::init(a.seed), &data, &cfg)?;
    if let Some(last) = curve.last() {
        eprintln!("{} samples, {} epochs, final loss {last:.4}", data.len(), curve.len());
    }
    let mut staged = Staged::default();
    staged.add(&a.out, format!("{}\n", net.to_json()?).into_bytes());
    if let Some(p) = &a.curve {
        let mut csv = String::from("epoch,loss\n");
        for (i, l) in curve.iter().enumerate() {
            csv.push_str(&format!("{},{l}\n", i + 1));
        }
        staged.add(p, csv.into_bytes());
    }
    finish(staged, start)
}

#[derive(Serialize)]
struct ClassifiedLine {
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    length_m: f64,
    width_m: f64,
    class: VesselCategory,
    probs: BTreeMap<&'static str, f64>,
}

fn classify(a: ClassifyArgs) -> Result<()> {
    let start = Instant::now();
    let net = Network::from_json(&read(&a.model)?)?;
    let records: Vec<FeatureRecord> = read_jsonl(open(&a.features)?)?;
    let lines = records
        .into_iter()
        .map(|r| {
            let dist = net.classify(&r.features()?)?;
            Ok(ClassifiedLine {
                class: dist.argmax(),
                probs: VesselCategory::ALL.iter().map(|c| (c.name(), dist.get(*c))).collect(),
                id: r.id,
                length_m: r.length_m,
                width_m: r.width_m,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut staged = Staged::default();
    staged.add(&a.out, jsonl_bytes(&lines)?);
    finish(staged, start)
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let start = Instant::now();
    let tracks = accept(&a.tracks, parse_track_points(open(&a.tracks)?)?);
    let truth = accept(&a.truth, parse_truth(open(&a.truth)?)?);
    let scans: Option<Vec<f64>> = match &a.scan_log {
        Some(p) => Some(read_jsonl::<ScanTime, _>(open(p)?)?.into_iter().map(|s| s.t).collect()),
        None => None,
    };
    let loaded = start.elapsed().as_secs_f64();
    if tracks.is_empty() && scans.as_ref().is_none_or(|s| s.is_empty()) {
        return Err(Error::Validation("nothing to score: no track points and no scan log".into()));
    }
    let mut report = evaluate(&tracks, &truth, scans.as_deref(), a.c, a.p)?;
    let scored = start.elapsed().as_secs_f64();
    report.timings_s.insert("load".into(), loaded);
    report.timings_s.insert("gospa".into(), scored - loaded);

    let mut staged = Staged::default();
    if let (Some(ap), Some(sp)) = (&a.anomalies, &a.scenario) {
        let reports: Vec<AnomalyReport> = read_jsonl(open(ap)?)?;
        let scenario: ScenarioConfig = serde_json::from_str(&read(sp)?)?;
        scenario.validate()?;
        let roc = roc_curve(&label_anomaly_reports(&reports, &scenario)?);
        let mut csv = String::from("threshold,tpr,fpr\n");
        for r in &roc {
            csv.push_str(&format!("{},{},{}\n", r.threshold, r.tpr, r.fpr));
        }
        staged.add(a.out_dir.join("roc.csv"), csv.into_bytes());
        report.roc = Some(roc);
        report.timings_s.insert("roc".into(), start.elapsed().as_secs_f64() - scored);
    }
    eprintln!(
        "{} scans, mean GOSPA {:.1} m, label accuracy {}",
        report.n_scans,
        report.mean_gospa,
        report.label_accuracy.map_or("n/a".into(), |x| format!("{x:.3}"))
    );
    staged.add(a.out_dir.join("gospa.csv"), report.to_csv().into_bytes());
    staged.add(a.out_dir.join("metrics.json"), json_bytes(&report)?);
    finish(staged, start)
}

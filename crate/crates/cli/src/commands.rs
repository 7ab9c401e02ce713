use std::error::Error as StdError;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::net::{SocketAddr, TcpListener, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use mamimo_csi::campaign::{
    plan_campaign, run_campaign, run_campaign_with, serve_positioner, CampaignSetup, CaptureService,
    PositionerBank, PositionerState, SimulatedClock, SyntheticSource, TcpPositioner,
};
use mamimo_csi::channel::{add_noise, synth_channel};
use mamimo_csi::dataset::{load_index, read_header, write_sample, DatasetIndex, INDEX_FILE};
use mamimo_csi::grid::{grid_positions, SampleGrid, Traversal};
use mamimo_csi::localization::{build_fingerprints, evaluate_localizer, leave_one_out, FeatureMode, Weighting};
use mamimo_csi::powermap::{normalize_jointly, power_map_labelled, synthetic_power_map, PowerMap, SyntheticScene};
use mamimo_csi::scheduling::{
    def_schedule, evaluate_schedule, random_schedule, sus_schedule, PoolUser, Schedule, UserPool,
};
use mamimo_csi::{CsiSample, Position3, SampleId, TopologyKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::setup::{noise_spec, Setup};
use crate::{
    Algorithm, CampaignArgs, Cli, Command, Features, InspectArgs, LocateArgs, PowermapArgs, ScheduleArgs, ServeArgs,
    SynthArgs, WeightingArg,
};

type CmdResult = Result<(), Box<dyn StdError>>;

pub fn run(cli: &Cli) -> CmdResult {
    let setup = Setup::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Synth(a) => synth(&setup, a, cli.seed),
        Command::Campaign(a) => campaign(&setup, a, cli.seed),
        Command::ServeCapture(a) => serve(&setup, a, cli.seed),
        Command::Powermap(a) => powermap(&setup, a),
        Command::Schedule(a) => schedule(&setup, a, cli.seed),
        Command::Locate(a) => locate(a),
        Command::Inspect(a) => inspect(a),
    }
}

fn centre_or_roi(setup: &Setup, centre: Option<(f64, f64)>) -> Position3 {
    let roi = setup.layout.roi_centre();
    centre.map_or(roi, |(x, y)| Position3::new(x, y, roi.z))
}

fn synth(setup: &Setup, a: &SynthArgs, seed: u64) -> CmdResult {
    let kind = TopologyKind::from(a.channel.topology);
    let geom = setup.geometry(kind)?;
    let (cfg, scatterers) = setup.channel_with(a.channel.pattern_exponent, a.channel.scatterers.as_deref())?;
    let resolution = a.resolution.unwrap_or(setup.layout.resolution_mm);
    let grid = SampleGrid::centred(centre_or_roi(setup, a.centre), a.nodes, resolution)?;

    fs::create_dir_all(&a.out)?;
    let mut index = DatasetIndex::new(&a.out, Some(kind), setup.radio.clone());
    for (i, p) in grid_positions(&grid, Traversal::Raster).into_iter().enumerate() {
        let clean = synth_channel(&geom, p, &setup.radio, &cfg, &scatterers, a.user)?;
        let csi = add_noise(&clean, &noise_spec(a.channel.snr, seed.wrapping_add(i as u64)))?;
        let id = SampleId::from_counter(i)?;
        write_sample(index.sample_path(&id), &csi)?;
        index.push(id, p, a.user)?;
    }
    index.save(a.out.join(INDEX_FILE))?;
    println!("wrote {} {kind} samples to {}", index.len(), a.out.display());
    Ok(())
}

fn resolve(addr: &str) -> Result<SocketAddr, Box<dyn StdError>> {
    addr.to_socket_addrs()?
        .next()
        .ok_or_else(|| format!("`{addr}` does not resolve").into())
}

fn campaign(setup: &Setup, a: &CampaignArgs, seed: u64) -> CmdResult {
    if !(1..=4).contains(&a.positioners) {
        return Err(format!("--positioners must be 1 to 4, got {}", a.positioners).into());
    }
    let kind = TopologyKind::from(a.channel.topology);
    let resolution = a.resolution.unwrap_or(setup.layout.resolution_mm);
    let grids = (0..a.positioners)
        .map(|p| {
            let full = setup.layout.positioner_grid(p)?;
            if a.full {
                return Ok(full);
            }
            let mut g = SampleGrid::square(full.origin, a.nodes, resolution)?;
            g.positioner_id = p;
            Ok(g)
        })
        .collect::<mamimo_csi::Result<Vec<_>>>()?;
    let plan = plan_campaign(&grids, a.pattern.into())?;

    let outcome = match (&a.capture_addr, &a.positioner_addr) {
        (Some(capture), Some(positioner)) => {
            fs::create_dir_all(&a.out)?;
            let timeout = Duration::from_secs(10);
            let mut link = TcpPositioner::connect(resolve(positioner)?, timeout)?;
            let index = DatasetIndex::new(&a.out, Some(kind), setup.radio.clone());
            run_campaign_with(&plan, &mut link, resolve(capture)?, index, &mut SimulatedClock::default(), timeout)?
        }
        (None, None) => {
            let (channel, scatterers) =
                setup.channel_with(a.channel.pattern_exponent, a.channel.scatterers.as_deref())?;
            let mut cs = CampaignSetup::new(setup.geometry(kind)?, setup.radio.clone());
            cs.channel = channel;
            cs.scatterers = scatterers;
            cs.noise = noise_spec(a.channel.snr, seed);
            run_campaign(&plan, &cs, &a.out)?
        }
        _ => return Err("set both the capture and the positioner address, or neither".into()),
    };
    println!(
        "captured {} samples in {}; campaign clock {:.1} s (estimate {:.1} s)",
        outcome.index.len(),
        a.out.display(),
        outcome.elapsed.as_secs_f64(),
        plan.duration_estimate().as_secs_f64()
    );
    Ok(())
}

fn serve(setup: &Setup, a: &ServeArgs, seed: u64) -> CmdResult {
    let kind = TopologyKind::from(a.channel.topology);
    fs::create_dir_all(&a.out)?;
    let tables = setup
        .layout
        .positioner_grids()?
        .into_iter()
        .map(|g| PositionerState::new(g.origin, setup.layout.positioner_extent_mm))
        .collect();
    let bank = Arc::new(Mutex::new(PositionerBank::new(tables)));
    let (channel, scatterers) = setup.channel_with(a.channel.pattern_exponent, a.channel.scatterers.as_deref())?;
    let source = SyntheticSource::new(setup.geometry(kind)?, setup.radio.clone(), channel, bank.clone())
        .with_scatterers(scatterers)
        .with_noise(noise_spec(a.channel.snr, seed));

    let positioner_listener = TcpListener::bind(&a.positioner_listen)?;
    let capture_listener = TcpListener::bind(&a.listen)?;
    eprintln!(
        "positioners on {}, capture on {}, writing to {}",
        positioner_listener.local_addr()?,
        capture_listener.local_addr()?,
        a.out.display()
    );
    let never = Arc::new(AtomicBool::new(false));
    {
        let never = never.clone();
        std::thread::spawn(move || serve_positioner(positioner_listener, bank, never));
    }
    let mut service = CaptureService::new(&a.out, Box::new(source));
    service.serve(capture_listener, &never)?;
    Ok(())
}

fn with_extension(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = path.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_else(|| "pgm".into());
    path.with_file_name(format!("{stem}_{suffix}.{ext}"))
}

fn write_map(map: &PowerMap, pgm: &Path, min_db: f64, max_db: f64) -> CmdResult {
    let mut out = BufWriter::new(File::create(pgm)?);
    map.write_pgm(&mut out, min_db, max_db)?;
    out.flush()?;
    let csv = with_extension(pgm, "csv");
    let mut out = BufWriter::new(File::create(&csv)?);
    map.write_csv(&mut out)?;
    out.flush()?;
    let (ix, iy) = map.argmax_node();
    println!(
        "{} + {}: peak at {}, max adjacent step {:.3} dB",
        pgm.display(),
        csv.display(),
        map.grid.node(ix, iy),
        map.max_adjacent_db_jump()
    );
    Ok(())
}

fn powermap(setup: &Setup, a: &PowermapArgs) -> CmdResult {
    let centre = centre_or_roi(setup, a.centre);
    let resolution = a.resolution.unwrap_or_else(|| {
        if a.nodes > 1 {
            setup.layout.roi_width_mm() / (a.nodes - 1) as f64
        } else {
            setup.layout.resolution_mm
        }
    });
    let grid = SampleGrid::centred(centre, a.nodes, resolution)?;
    let target = centre_or_roi(setup, a.target);

    if let Some(index_path) = &a.dataset {
        let index = load_index(index_path)?;
        let target_csi = dataset_target(&index, a.target_id.as_deref(), target)?;
        let samples = index.samples().map(|r| r.map(|(_, csi)| csi));
        let map = power_map_labelled(&grid, samples, &target_csi, a.scheme.into(), &setup.budget)?;
        return write_map(&map, &a.out, a.min_db, a.max_db);
    }

    let kinds: Vec<TopologyKind> = match a.topology.as_str() {
        "all" => TopologyKind::ALL.to_vec(),
        one => vec![one.parse()?],
    };
    let (channel, scatterers) = setup.channel_with(a.pattern_exponent, a.scatterers.as_deref())?;
    let mut maps = Vec::with_capacity(kinds.len());
    for &kind in &kinds {
        let geometry = setup.geometry(kind)?;
        let scene = SyntheticScene {
            geometry: &geometry,
            radio: &setup.radio,
            channel: &channel,
            scatterers: &scatterers,
            user_id: 0,
        };
        maps.push(synthetic_power_map(&grid, &scene, target, a.scheme.into(), &setup.budget)?);
    }
    if kinds.len() == 1 {
        return write_map(&maps[0], &a.out, a.min_db, a.max_db);
    }
    normalize_jointly(&mut maps);
    for (kind, map) in kinds.iter().zip(&maps) {
        write_map(map, &suffixed(&a.out, &kind.to_string()), a.min_db, a.max_db)?;
    }
    Ok(())
}

/// The sample named by `id`, or else the one labelled closest to `near`.
fn dataset_target(index: &DatasetIndex, id: Option<&str>, near: Position3) -> Result<CsiSample, Box<dyn StdError>> {
    let record = match id {
        Some(id) => {
            let id: SampleId = id.parse()?;
            index.records.iter().find(|r| r.sample_id == id).ok_or_else(|| format!("no sample `{id}` in the index"))?
        }
        None => index
            .records
            .iter()
            .min_by(|a, b| a.label.distance_mm(&near).total_cmp(&b.label.distance_mm(&near)))
            .ok_or("the index is empty")?,
    };
    let csi = mamimo_csi::dataset::read_sample(&record.path)?;
    Ok(csi.with_label(record.label))
}

fn schedule(setup: &Setup, a: &ScheduleArgs, seed: u64) -> CmdResult {
    let pool = match &a.dataset {
        Some(path) => {
            let index = load_index(path)?;
            let samples = index.samples().map(|r| r.map(|(_, csi)| csi)).collect::<mamimo_csi::Result<Vec<_>>>()?;
            UserPool::from_labelled(samples)?
        }
        None => random_pool(setup, a, seed)?,
    };
    let schedule: Schedule = match a.algorithm {
        Algorithm::Def => def_schedule(&pool, a.group_size)?,
        Algorithm::Sus => sus_schedule(&pool, a.alpha, a.group_size)?,
        Algorithm::Random => random_schedule(pool.len(), a.group_size, seed)?,
    };
    let report = evaluate_schedule(&schedule, &pool, a.scheme.into(), &setup.budget)?;
    for (g, se) in report.group_sum_se.iter().enumerate() {
        println!("group {g}: {:?} sum SE {se:.4} bits/s/Hz", schedule.groups[g]);
    }
    let spread = report.min_intra_group_distance_mm.map_or("n/a".to_string(), |d| format!("{d:.1} mm"));
    println!(
        "{:?}: {} users in {} groups, mean sum SE {:.4} bits/s/Hz, closest co-scheduled pair {spread}",
        a.algorithm,
        pool.len(),
        schedule.groups.len(),
        report.mean_sum_se
    );
    if let Some(out) = &a.out {
        let mut w = BufWriter::new(File::create(out)?);
        schedule.write_csv(&pool, &mut w)?;
        w.flush()?;
    }
    Ok(())
}

/// Users at uniformly random points of the ROI, all on pilot set 0.
fn random_pool(setup: &Setup, a: &ScheduleArgs, seed: u64) -> Result<UserPool, Box<dyn StdError>> {
    let geom = setup.geometry(a.topology)?;
    let width = setup.layout.roi_width_mm();
    let centre = setup.layout.roi_centre();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users = (0..a.users)
        .map(|i| {
            let p = Position3::new(
                centre.x + rng.random_range(-0.5..0.5) * width,
                centre.y + rng.random_range(-0.5..0.5) * width,
                centre.z,
            );
            let csi = synth_channel(&geom, p, &setup.radio, &setup.channel, &[], 0)?;
            Ok(PoolUser { user_ref: i, csi, position: p })
        })
        .collect::<mamimo_csi::Result<Vec<_>>>()?;
    Ok(UserPool::new(users)?)
}

fn locate(a: &LocateArgs) -> CmdResult {
    let mode = match a.features {
        Features::Raw => FeatureMode::RawUnitNorm,
        Features::Magnitude => FeatureMode::MagnitudeOnly,
        Features::Phase => FeatureMode::PhaseRelative,
    };
    let weighting = match a.weighting {
        WeightingArg::Uniform => Weighting::Uniform,
        WeightingArg::Idw => Weighting::InverseDistance,
    };
    let train = load_index(&a.dataset)?;
    let db = build_fingerprints(train.samples().map(|r| r.map(|(_, c)| c)), mode, train.topology)?;
    if let Some(path) = &a.db_out {
        db.save(path)?;
    }
    let report = match &a.test {
        Some(path) => {
            let test = load_index(path)?;
            evaluate_localizer(&db, test.samples().map(|r| r.map(|(_, c)| c)), a.k, weighting)?
        }
        None => leave_one_out(&db, a.k, weighting)?,
    };
    println!(
        "{} queries against {} fingerprints: mean {:.3} mm, median {:.3} mm, p95 {:.3} mm",
        report.errors.len(),
        db.len(),
        report.mean_mm,
        report.median_mm,
        report.p95_mm
    );
    if let Some(path) = &a.report {
        let mut w = BufWriter::new(File::create(path)?);
        report.write_csv(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn inspect(a: &InspectArgs) -> CmdResult {
    let (header, len) = read_header(&a.file)?;
    println!(
        "{}: magic={} version={} M={} F={} size={} bytes (expected {})",
        a.file.display(),
        String::from_utf8_lossy(&header.magic),
        header.version,
        header.antennas,
        header.subcarriers,
        len,
        header.file_len()
    );
    if len != header.file_len() {
        return Err(format!("file is {len} bytes, header declares {}", header.file_len()).into());
    }
    Ok(())
}

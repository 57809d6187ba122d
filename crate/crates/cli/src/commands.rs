use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use skipstop_core::forecast::{fit_scale, split_random, train, windows, Hyper};
use skipstop_core::sim::write_schedule_csv;
use skipstop_core::smartcard::{
    hour_label, read_transactions, write_transactions, HourWindow, RejectReason, Rejected,
};
use skipstop_core::{
    aggregate_hourly, baseline_average, export_schedule, generate_synthetic, nominal_baseline,
    pair_trips, predict_peak, simulate as run_simulation, validate_pattern, Colony, DemandMatrix,
    Error, LstmModel, OdSeries, StopSkipPattern, Summary, SyntheticSpec,
};

use crate::manifest::Manifest;
use crate::{CliError, ForecastArgs, GenDataArgs, IngestArgs, OptimizeArgs, SimulateArgs};

type Result<T> = std::result::Result<T, CliError>;

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

/// Creates `path`, hands a buffered writer to `fill` and records the file.
fn emit(
    manifest: &mut Manifest,
    path: PathBuf,
    fill: impl FnOnce(&mut BufWriter<File>) -> std::result::Result<(), Error>,
) -> Result<()> {
    let io = |e| Error::Io {
        path: path.clone(),
        source: e,
    };
    let mut w = BufWriter::new(File::create(&path).map_err(io)?);
    fill(&mut w)?;
    w.flush().map_err(io)?;
    manifest.outputs.push(path);
    Ok(())
}

fn emit_text(manifest: &mut Manifest, path: PathBuf, text: &str) -> Result<()> {
    emit(manifest, path.clone(), |w| {
        w.write_all(text.as_bytes())
            .map_err(|e| Error::Io { path, source: e })
    })
}

pub fn gen_data(args: &GenDataArgs, seed: Option<u64>) -> Result<()> {
    let mut spec = SyntheticSpec::load(&args.config)?;
    if let Some(s) = seed {
        spec.rng_seed = s;
    }
    let data = generate_synthetic(&spec)?;
    ensure_dir(&args.out)?;
    let mut m = Manifest::new("gen-data");
    m.config = Some(args.config.clone());
    m.seed = Some(spec.rng_seed);

    emit(&mut m, args.out.join("transactions.csv"), |w| {
        write_transactions(&data.transactions, w)
    })?;
    emit(&mut m, args.out.join("od_counts.csv"), |w| data.counts.write_matrix_csv(w))?;
    emit(&mut m, args.out.join("od_rates.csv"), |w| data.rates.write_matrix_csv(w))?;
    let mut weights = String::from("station,weight\n");
    for (s, w) in data.station_weights.iter().enumerate() {
        weights.push_str(&format!("{},{w}\n", s + 1));
    }
    emit_text(&mut m, args.out.join("station_weights.csv"), &weights)?;
    m.write(&args.out)?;
    println!(
        "{} trips ({} transactions) over {} service hours written to {}",
        data.trips.len(),
        data.transactions.len(),
        data.counts.len(),
        args.out.display()
    );
    Ok(())
}

fn reason_name(r: RejectReason) -> &'static str {
    match r {
        RejectReason::DoubleEntry => "double_entry",
        RejectReason::ExitWithoutEntry => "exit_without_entry",
        RejectReason::UnmatchedEntry => "unmatched_entry",
        RejectReason::WrongDirection => "wrong_direction",
        RejectReason::NonPositiveDuration => "non_positive_duration",
    }
}

fn write_rejected<W: Write>(rejected: &[Rejected], mut w: W) -> std::result::Result<(), Error> {
    let io = |e| Error::Io {
        path: "<rejected>".into(),
        source: e,
    };
    writeln!(w, "card_id,timestamp,station,type,reason").map_err(io)?;
    for r in rejected {
        let t = &r.record;
        writeln!(
            w,
            "{},{},{},{},{}",
            t.card_id,
            t.timestamp_s,
            t.station,
            t.kind,
            reason_name(r.reason)
        )
        .map_err(io)?;
    }
    Ok(())
}

pub fn ingest(args: &IngestArgs) -> Result<()> {
    if args.first_hour >= args.end_hour || args.end_hour > 24 {
        return Err(Error::InvalidConfig("service hours must satisfy first-hour < end-hour <= 24".into()).into());
    }
    let txs = read_transactions(&args.transactions, args.max_rows)?;
    let (trips, rejected) = pair_trips(&txs);
    if trips.is_empty() {
        return Err(Error::Data(format!("{}: no complete trips", args.transactions.display())).into());
    }
    let seen = txs.iter().map(|t| t.station).max().unwrap_or(0);
    let stations = args.stations.unwrap_or(seen);
    if stations < 2 {
        return Err(Error::InvalidConfig("a line needs at least 2 stations".into()).into());
    }
    let beyond = trips.iter().filter(|t| t.dest_station > stations).count();
    let first_day = trips.iter().map(|t| hour_label(t.entry_s)).min().unwrap_or(0).div_euclid(24);
    let last_day = trips.iter().map(|t| hour_label(t.entry_s)).max().unwrap_or(0).div_euclid(24);
    let window = HourWindow {
        start: first_day * 24,
        end: (last_day + 1) * 24,
        first_hour: args.first_hour,
        end_hour: args.end_hour,
    };
    let series = aggregate_hourly(&trips, stations, window);

    ensure_dir(&args.out)?;
    let mut m = Manifest::new("ingest");
    m.inputs.push(args.transactions.clone());
    emit(&mut m, args.out.join("od_series.csv"), |w| series.write_matrix_csv(w))?;
    emit(&mut m, args.out.join("rejected.csv"), |w| write_rejected(&rejected, w))?;
    m.write(&args.out)?;
    println!(
        "{} transactions: {} trips, {} rejected records, {} hourly rows",
        txs.len(),
        trips.len(),
        rejected.len(),
        series.len()
    );
    if beyond > 0 {
        println!("{beyond} trips end beyond station {stations} and were not counted");
    }
    Ok(())
}

/// Hours of `series` before `peak_hour` on its last day, and the label of
/// that peak hour.
fn peak_history(series: &OdSeries, peak_hour: u32) -> Result<(OdSeries, i64)> {
    if peak_hour >= 24 {
        return Err(Error::InvalidConfig(format!("peak hour {peak_hour} is not an hour of day")).into());
    }
    let last = series
        .labels()
        .last()
        .ok_or_else(|| Error::Data("empty OD series".into()))?;
    let target = last.div_euclid(24) * 24 + i64::from(peak_hour);
    let hours = series.hours().iter().filter(|(l, _)| *l < target).cloned().collect();
    Ok((OdSeries::new(series.num_stations(), hours)?, target))
}

pub fn forecast(args: &ForecastArgs, seed: u64) -> Result<()> {
    let t = &args.train;
    if t.lookback == 0 {
        return Err(Error::InvalidConfig("lookback must be positive".into()).into());
    }
    if !(t.train_fraction > 0.0 && t.train_fraction < 1.0) {
        return Err(Error::InvalidConfig("train fraction must be in (0, 1)".into()).into());
    }
    let series = OdSeries::load_matrix_csv(&args.series)?;
    let all = windows(&series, t.lookback, None);
    let (train_set, valid_set) = split_random(&all, t.train_fraction, seed);
    if train_set.is_empty() || valid_set.is_empty() {
        return Err(Error::Data(format!(
            "{}: {} windows of {} consecutive hours are too few to split",
            args.series.display(),
            all.len(),
            t.lookback + 1
        ))
        .into());
    }
    let dense = (t.dense > 0).then_some(t.dense);
    let model = LstmModel::new(fit_scale(&train_set)?, t.lookback, t.hidden, dense, seed)?;
    let hyper = Hyper {
        batch_size: t.batch,
        epochs: t.epochs,
        learning_rate: t.lr,
        seed: seed.wrapping_add(1),
    };
    let (model, curve) = train(model, &train_set, &valid_set, hyper)?;

    ensure_dir(&args.out)?;
    let mut m = Manifest::new("forecast");
    m.inputs.push(args.series.clone());
    m.seed = Some(seed);
    emit(&mut m, args.out.join("model.json"), |w| model.write_checkpoint(w))?;
    emit(&mut m, args.out.join("loss_curve.csv"), |w| curve.write_csv(w))?;

    let (history, peak) = peak_history(&series, args.peak_hour)?;
    match predict_peak(&model, &history) {
        Ok(pred) => emit(&mut m, args.out.join("forecast.csv"), |w| pred.write_csv(w))?,
        Err(e) => println!("no peak forecast: {e}"),
    }
    if let Ok(base) = baseline_average(&series, peak) {
        emit(&mut m, args.out.join("baseline_forecast.csv"), |w| base.write_csv(w))?;
    }
    m.write(&args.out)?;

    println!(
        "{} training / {} validation windows, {} epochs",
        train_set.len(),
        valid_set.len(),
        curve.epochs.len()
    );
    if let Some(last) = curve.epochs.last() {
        println!(
            "final MSE (normalised): train {:.6}, validation {:.6}",
            last.train_mse, last.valid_mse
        );
    }
    Ok(())
}

fn render_pattern(p: &StopSkipPattern) -> String {
    let mut s = String::from("train |");
    for j in 1..=p.num_stations() {
        s.push_str(&format!("{j:>3}"));
    }
    s.push('\n');
    for i in 1..=p.num_trains() {
        s.push_str(&format!("{i:>5} |"));
        for j in 1..=p.num_stations() {
            s.push_str(if p.stops_at(i, j) { "  1" } else { "  0" });
        }
        s.push('\n');
    }
    s
}

pub fn optimize(args: &OptimizeArgs, seed: u64) -> Result<()> {
    let cfg = args.line.load()?;
    let mut m = Manifest::new("optimize");
    m.config = Some(args.line.config.clone());
    m.seed = Some(seed);

    let demand = match (&args.source.demand, &args.source.model) {
        (Some(path), _) => {
            m.inputs.push(path.clone());
            DemandMatrix::load_csv(path, cfg.num_stations)?
        }
        (None, Some(model_path)) => {
            let history_path = args
                .history
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("--model needs --history".into()))?;
            m.inputs.push(model_path.clone());
            m.inputs.push(history_path.clone());
            let model = LstmModel::load(model_path)?;
            let series = OdSeries::load_matrix_csv(history_path)?;
            let (history, _) = peak_history(&series, args.peak_hour)?;
            predict_peak(&model, &history)?
        }
        (None, None) => unreachable!("clap requires a demand source"),
    };
    if demand.num_stations() != cfg.num_stations {
        return Err(Error::Shape(format!(
            "demand covers {} stations, line has {}",
            demand.num_stations(),
            cfg.num_stations
        ))
        .into());
    }

    let mut colony = Colony::new(&cfg, &demand, args.aco.params(seed))?;
    if args.no_skip {
        colony = colony.forbid_all_skips();
    }
    let run = colony.run()?;
    let sim = run_simulation(&cfg, &demand, &run.best_pattern)?;
    if !sim.feasible {
        return Err(Error::InvalidConfig("no feasible stop/skip pattern found".into()).into());
    }
    let summary = Summary::new(&sim, &run.best_pattern, &run.baseline, cfg.gamma)?;

    ensure_dir(&args.out)?;
    emit(&mut m, args.out.join("demand.csv"), |w| demand.write_csv(w))?;
    emit(&mut m, args.out.join("pattern.csv"), |w| run.best_pattern.write_csv(w))?;
    emit(&mut m, args.out.join("convergence.csv"), |w| run.write_log(w))?;
    emit(&mut m, args.out.join("schedule.csv"), |w| {
        write_schedule_csv(&export_schedule(&sim), w)
    })?;
    emit_text(&mut m, args.out.join("summary.json"), &summary.to_json())?;
    m.write(&args.out)?;

    print!("{}", render_pattern(&run.best_pattern));
    println!();
    print!("{}", summary.render_table());
    Ok(())
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let cfg = args.line.load()?;
    let demand = DemandMatrix::load_csv(&args.demand, cfg.num_stations)?;
    let pattern = StopSkipPattern::load_csv(&args.pattern)?;
    let violations = validate_pattern(&pattern, &cfg)?;
    if !violations.is_empty() {
        return Err(CliError::Violations(violations.iter().map(ToString::to_string).collect()));
    }
    let sim = run_simulation(&cfg, &demand, &pattern)?;
    let baseline = nominal_baseline(&cfg, &demand)?;
    let summary = Summary::new(&sim, &pattern, &baseline, cfg.gamma)?;

    ensure_dir(&args.out)?;
    let mut m = Manifest::new("simulate");
    m.config = Some(args.line.config.clone());
    m.inputs.push(args.demand.clone());
    m.inputs.push(args.pattern.clone());
    emit(&mut m, args.out.join("schedule.csv"), |w| {
        write_schedule_csv(&export_schedule(&sim), w)
    })?;
    emit_text(&mut m, args.out.join("summary.json"), &summary.to_json())?;
    m.write(&args.out)?;
    print!("{}", summary.render_table());

    if !sim.feasible {
        let list = sim
            .headway_violations
            .iter()
            .map(|(i, j)| format!("train {i} held for the minimum arrival gap at station {j}"))
            .collect();
        return Err(CliError::Violations(list));
    }
    Ok(())
}

use std::fmt::Write as _;
use std::path::Path;

use agentgen::agent::{survival_many, survival_of_weights, CartPoleNet, WeightVector, WEIGHT_DIM};
use agentgen::cartpole::{write_trajectory_jsonl, CartPole};
use agentgen::convergence::{
    all_pairs, collect_reference_states, convergence_distance, correlation_matrix, draw_with_survival, summarize,
    Layer, PairCd,
};
use agentgen::gen::{curve_csv, load_model, sample_networks, save_model, train_gen as fit, GenMode, GenModel, SampleMode};
use agentgen::latent::{linspace, sweep};
use agentgen::repair::{repair_sweep as run_repair_sweep, sweep_csv, Criterion};
use agentgen::rng::{labeled_seed, Rng};
use agentgen::stats::{self, histogram, wasserstein1};
use agentgen::zoo::{build_zoo, encode_zoo, load_zoo, subset, write_jsonl, AgentRecord, Group, Zoo};
use serde_json::json;

use crate::config::{RunConfig, SampleSection};
use crate::error::{CliError, CliResult};
use crate::report::{write_csv, write_file, Provenance};
use crate::{
    Common, ConvergenceArgs, EfficiencyArgs, EvalArgs, InterpolateArgs, ModeArg, RepairArgs, SampleArgs,
    SampleModeArg, TrainGenArgs, TrainZooArgs,
};

fn setup(common: &Common) -> CliResult<(RunConfig, u64)> {
    let cfg = RunConfig::load(common.config.as_deref())?;
    let seed = common.seed.unwrap_or(cfg.seed);
    if let Some(n) = common.workers {
        if n == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot set up {n} workers: {e}")))?;
    }
    Ok((cfg, seed))
}

fn with_path(path: &Path) -> impl Fn(agentgen::error::Error) -> CliError + '_ {
    move |e| match CliError::from(e) {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    }
}

fn open_zoo(path: &Path) -> CliResult<Zoo> {
    load_zoo(path).map_err(with_path(path))
}

fn open_model(path: &Path) -> CliResult<GenModel> {
    Ok(load_model(path).map_err(with_path(path))?.0)
}

fn parse_label(label: Option<&str>) -> CliResult<Option<Group>> {
    label
        .map(|s| s.parse::<Group>().map_err(|e| CliError::Usage(e.to_string())))
        .transpose()
}

fn positive(name: &str, v: usize) -> CliResult<()> {
    if v == 0 {
        return Err(CliError::Usage(format!("{name} must be at least 1")));
    }
    Ok(())
}

fn find_record(zoo: &Zoo, id: u64) -> CliResult<&AgentRecord> {
    zoo.get(id).ok_or_else(|| {
        let ids = zoo.ids();
        let contiguous = ids.windows(2).all(|w| w[1] == w[0] + 1);
        let available = match (ids.first(), ids.last()) {
            (None, _) | (_, None) => "none (empty zoo)".to_string(),
            (Some(a), Some(b)) if contiguous => format!("{a}..={b}"),
            _ => {
                let shown: Vec<String> = ids.iter().take(20).map(u64::to_string).collect();
                let more = if ids.len() > 20 { format!(", ... ({} total)", ids.len()) } else { String::new() };
                format!("{}{more}", shown.join(", "))
            }
        };
        CliError::Data(format!("unknown record id {id}; available ids: {available}"))
    })
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

pub fn train_zoo(a: TrainZooArgs) -> CliResult<()> {
    let (cfg, seed) = setup(&a.common)?;
    let mut zc = cfg.train_zoo;
    zc.seed = seed;
    if let Some(n) = a.n {
        zc.runs = n;
    }
    if let Some(s) = a.snapshots {
        zc.budget.snapshots_per_run = s;
    }
    if let Some(v) = a.min_steps {
        zc.budget.min_steps = v;
    }
    if let Some(v) = a.max_steps {
        zc.budget.max_steps = v;
    }
    if let Some(v) = a.eval_episodes {
        zc.eval_episodes = v;
    }
    positive("--n", zc.runs)?;
    let prov = Provenance::new("train-zoo", seed, &zc)?;
    let mut zoo = build_zoo(&zc)?;
    if zoo.is_empty() {
        return Err(CliError::Numerical(format!(
            "every training run failed; first error: {}",
            zoo.meta.failures.first().map_or("unknown", |f| f.error.as_str())
        )));
    }
    zoo.meta.extra = Some(prov.to_json());
    write_file(&a.out, &encode_zoo(&zoo)?)?;
    if let Some(path) = &a.jsonl {
        let mut buf = Vec::new();
        write_jsonl(&zoo, &mut buf)?;
        write_file(path, &buf)?;
    }
    println!(
        "{} records from {} runs ({} failed); bins {:?}",
        zoo.len(),
        zc.runs,
        zoo.meta.failures.len(),
        zoo.meta.bin_counts
    );
    Ok(())
}

pub fn train_gen(a: TrainGenArgs) -> CliResult<()> {
    let (cfg, seed) = setup(&a.common)?;
    let mut gc = cfg.train_gen;
    if let Some(mode) = a.mode {
        gc.mode = match mode {
            ModeArg::Combined => GenMode::Combined,
            ModeArg::Conditional => GenMode::Conditional,
            ModeArg::PerGroup => {
                let g = parse_label(a.group.as_deref())?
                    .ok_or_else(|| CliError::Usage("--mode per-group needs --group".into()))?;
                GenMode::PerGroup(g)
            }
        };
    }
    if let Some(e) = a.epochs {
        gc.epochs = e;
    }
    if let Some(b) = a.batch_size {
        gc.batch_size = b;
    }
    let zoo = open_zoo(&a.zoo)?;
    let prov = Provenance::new("train-gen", seed, &json!({ "train_gen": gc, "zoo": path_str(&a.zoo) }))?;
    let trained = fit(&zoo, &gc, &mut Rng::new(labeled_seed(seed, "train-gen")))?;
    save_model(&trained.model, &a.out, Some(prov.to_json())).map_err(with_path(&a.out))?;
    if let Some(path) = &a.curve {
        write_csv(path, &prov, &curve_csv(&trained.curve))?;
    }
    if let (Some(first), Some(last)) = (trained.curve.first(), trained.curve.last()) {
        println!("loss {:.3} -> {:.3} over {} epochs", first.total, last.total, trained.curve.len());
    }
    Ok(())
}

/// Draws `s.n` networks and measures each one. Shared by `sample` and
/// `efficiency-sweep` so both consume the same random streams.
fn draw_and_eval(model: &GenModel, source: Option<&Zoo>, s: &SampleSection, seed: u64) -> CliResult<Vec<f64>> {
    positive("eval_episodes", s.eval_episodes)?;
    let rng = Rng::new(labeled_seed(seed, "sample"));
    let samples = sample_networks(model, s.n, s.mode, source, s.label, &mut rng.fork_labeled("draw"))?;
    Ok(survival_many(&samples, s.eval_episodes, &rng.fork_labeled("eval"))?)
}

fn samples_csv(sts: &[f64]) -> String {
    let mut s = String::from("kind,index,survival_time,std\n");
    for (i, st) in sts.iter().enumerate() {
        let _ = writeln!(s, "sample,{i},{st},");
    }
    let sum = stats::summarize(sts);
    let _ = writeln!(s, "summary,,{},{}", sum.mean, sum.std);
    s
}

fn hist_csv(sts: &[f64], bins: usize) -> String {
    let mut s = String::from("bin_lo,bin_hi,count\n");
    for b in histogram(sts, 0.0, 200.0, bins) {
        let _ = writeln!(s, "{},{},{}", b.lo, b.hi, b.count);
    }
    s
}

pub fn sample(a: SampleArgs) -> CliResult<()> {
    let (cfg, seed) = setup(&a.common)?;
    let mut sc = cfg.sample;
    if let Some(n) = a.n {
        sc.n = n;
    }
    if let Some(m) = a.mode {
        sc.mode = match m {
            SampleModeArg::Prior => SampleMode::Prior,
            SampleModeArg::Posterior => SampleMode::Posterior,
        };
    }
    if a.label.is_some() {
        sc.label = parse_label(a.label.as_deref())?;
    }
    if let Some(e) = a.eval_episodes {
        sc.eval_episodes = e;
    }
    if let Some(b) = a.bins {
        sc.hist_bins = b;
    }
    positive("n", sc.n)?;
    positive("eval_episodes", sc.eval_episodes)?;
    positive("bins", sc.hist_bins)?;
    let model = open_model(&a.model)?;
    let zoo = a.zoo.as_deref().map(open_zoo).transpose()?;
    let prov = Provenance::new(
        "sample",
        seed,
        &json!({
            "sample": sc,
            "model": path_str(&a.model),
            "zoo": a.zoo.as_deref().map(path_str),
        }),
    )?;
    let sts = draw_and_eval(&model, zoo.as_ref(), &sc, seed)?;
    write_csv(&a.out, &prov, &samples_csv(&sts))?;
    if let Some(path) = &a.hist {
        write_csv(path, &prov, &hist_csv(&sts, sc.hist_bins))?;
    }
    let sum = stats::summarize(&sts);
    println!("{} samples: mean survival {:.2}, std {:.2}", sum.n, sum.mean, sum.std);
    Ok(())
}

fn read_weights(path: &Path) -> CliResult<WeightVector> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let values: Vec<f64> = if text.trim_start().starts_with('[') {
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
    } else {
        text.split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| CliError::Data(format!("{}: bad number {t:?}: {e}", path.display())))
            })
            .collect::<CliResult<_>>()?
    };
    if values.len() != WEIGHT_DIM {
        return Err(CliError::Data(format!(
            "{}: expected {WEIGHT_DIM} weights, found {}",
            path.display(),
            values.len()
        )));
    }
    WeightVector::new(values).map_err(with_path(path))
}

pub fn eval(a: EvalArgs) -> CliResult<()> {
    let (cfg, seed) = setup(&a.common)?;
    let episodes = a.episodes.unwrap_or(cfg.eval.episodes);
    positive("--episodes", episodes)?;
    let (weights, source) = match (&a.weights, &a.zoo, a.id) {
        (Some(p), _, _) => (read_weights(p)?, path_str(p)),
        (None, Some(z), Some(id)) => {
            let zoo = open_zoo(z)?;
            (find_record(&zoo, id)?.weights.clone(), format!("{}#{id}", path_str(z)))
        }
        _ => return Err(CliError::Usage("give --weights or --zoo with --id".into())),
    };
    let prov = Provenance::new("eval", seed, &json!({ "episodes": episodes, "source": source }))?;
    let rng = Rng::new(labeled_seed(seed, "eval"));
    let st = survival_of_weights(&weights, episodes, &mut rng.fork_labeled("episodes"))?;
    if let Some(path) = &a.out {
        write_csv(path, &prov, &format!("source,episodes,survival_time\n{source},{episodes},{st}\n"))?;
    }
    if let Some(path) = &a.trajectory {
        let net = CartPoleNet::devectorize(&weights)?;
        let env = CartPole::default();
        let episode = env.rollout(
            |s| net.greedy_action(s),
            &mut rng.fork_labeled("trajectory"),
            env.config.max_steps,
            true,
        );
        let mut buf = Vec::new();
        write_trajectory_jsonl(&mut buf, &episode.trajectory.unwrap_or_default())?;
        write_file(path, &buf)?;
    }
    println!("survival_time {st}");
    Ok(())
}

struct NetGroup {
    name: &'static str,
    ids: Vec<u64>,
    nets: Vec<CartPoleNet>,
    survival: Vec<f64>,
}

fn group_from_model(
    name: &'static str,
    path: &Path,
    zoo: &Zoo,
    window: (f64, f64),
    default_label: Group,
    cfg: &crate::config::ConvergenceSection,
    rng: &mut Rng,
) -> CliResult<NetGroup> {
    let model = open_model(path)?;
    let source = match model.trained_group() {
        Some(g) => subset(zoo, Some(g), None, 0),
        None => zoo.clone(),
    };
    let label = model.is_conditional().then_some(default_label);
    let drawn = draw_with_survival(
        &model,
        &source,
        label,
        window,
        cfg.per_group,
        cfg.max_draws,
        cfg.eval_episodes,
        rng,
    )?;
    if drawn.len() < cfg.per_group {
        return Err(CliError::Data(format!(
            "only {} of {} {name} networks with survival in [{}, {}] after {} draws from {}",
            drawn.len(),
            cfg.per_group,
            window.0,
            window.1,
            cfg.max_draws,
            path.display()
        )));
    }
    let mut g = NetGroup {
        name,
        ids: Vec::new(),
        nets: Vec::new(),
        survival: Vec::new(),
    };
    for (i, (w, st)) in drawn.into_iter().enumerate() {
        g.ids.push(i as u64);
        g.nets.push(CartPoleNet::devectorize(&w)?);
        g.survival.push(st);
    }
    Ok(g)
}

fn group_from_zoo(name: &'static str, zoo: &Zoo, window: (f64, f64), n: usize, rng: &mut Rng) -> CliResult<NetGroup> {
    let pool: Vec<&AgentRecord> = zoo
        .records
        .iter()
        .filter(|r| (window.0..=window.1).contains(&r.survival_time))
        .collect();
    if pool.len() < n {
        return Err(CliError::Data(format!(
            "zoo has {} {name} records with survival in [{}, {}], need {n}",
            pool.len(),
            window.0,
            window.1
        )));
    }
    let mut picks = rng.sample_distinct(pool.len(), n);
    picks.sort_unstable();
    let mut g = NetGroup {
        name,
        ids: Vec::new(),
        nets: Vec::new(),
        survival: Vec::new(),
    };
    for i in picks {
        g.ids.push(pool[i].id);
        g.nets.push(CartPoleNet::devectorize(&pool[i].weights)?);
        g.survival.push(pool[i].survival_time);
    }
    Ok(g)
}

pub fn convergence(a: ConvergenceArgs) -> CliResult<()> {
    let (cfg, seed) = setup(&a.common)?;
    let mut cc = cfg.convergence;
    if let Some(n) = a.per_group {
        cc.per_group = n;
    }
    if let Some(n) = a.reference_states {
        cc.reference_states = n;
    }
    if cc.per_group < 2 {
        return Err(CliError::Usage("per_group must be at least 2 to form pairs".into()));
    }
    positive("eval_episodes", cc.eval_episodes)?;
    let zoo = open_zoo(&a.zoo)?;
    let prov = Provenance::new(
        "convergence",
        seed,
        &json!({
            "convergence": cc,
            "zoo": path_str(&a.zoo),
            "good_model": a.good_model.as_deref().map(path_str),
            "bad_model": a.bad_model.as_deref().map(path_str),
        }),
    )?;
    let rng = Rng::new(labeled_seed(seed, "convergence"));
    let groups = match (&a.good_model, &a.bad_model) {
        (Some(gm), Some(bm)) => [
            group_from_model("good", gm, &zoo, cc.good, Group::G4, &cc, &mut rng.fork_labeled("good"))?,
            group_from_model("bad", bm, &zoo, cc.bad, Group::G1, &cc, &mut rng.fork_labeled("bad"))?,
        ],
        _ => [
            group_from_zoo("good", &zoo, cc.good, cc.per_group, &mut rng.fork_labeled("good"))?,
            group_from_zoo("bad", &zoo, cc.bad, cc.per_group, &mut rng.fork_labeled("bad"))?,
        ],
    };
    let refs = collect_reference_states(&zoo, cc.reference_states, &mut rng.fork_labeled("refs"))?;

    let mut pairs_out = String::from("group,netA_id,netB_id,layer,CD_forward,CD_backward,CD_mean\n");
    let mut summary_out = String::from("group,mean_survival,layer,pairs,mean_cd,std_cd\n");
    for g in &groups {
        let pairs: Vec<PairCd> = all_pairs(&g.ids, &g.nets, &refs)?;
        for p in &pairs {
            let _ = writeln!(
                pairs_out,
                "{},{},{},{},{},{},{}",
                g.name,
                p.a,
                p.b,
                p.layer.name(),
                p.cd.forward,
                p.cd.backward,
                p.cd.mean
            );
        }
        let mean_st = stats::summarize(&g.survival).mean;
        for layer in [Layer::Hidden, Layer::Output] {
            let s = summarize(&pairs, layer);
            let _ = writeln!(summary_out, "{},{},{},{},{},{}", g.name, mean_st, layer.name(), s.pairs, s.mean, s.std);
            println!("{:<5} {:<6} mean CD {:.4} (std {:.4})", g.name, layer.name(), s.mean, s.std);
        }
    }
    write_csv(&a.out, &prov, &pairs_out)?;
    if let Some(path) = &a.summary {
        write_csv(path, &prov, &summary_out)?;
    }
    if let Some(dir) = &a.heatmaps {
        let [good, bad] = &groups;
        let panels = [
            ("good", &good.nets[0], &good.nets[1]),
            ("bad", &bad.nets[0], &bad.nets[1]),
            ("cross", &good.nets[0], &bad.nets[0]),
        ];
        for (name, x, y) in panels {
            for layer in [Layer::Hidden, Layer::Output] {
                let corr = correlation_matrix(x, y, &refs, layer)?;
                write_csv(&dir.join(format!("{name}_{}.csv", layer.name())), &prov, &corr.to_csv())?;
            }
        }
    }
    Ok(())
}

pub fn interpolate(a: InterpolateArgs) -> CliResult<()> {
    let (cfg, seed) = setup(&a.common)?;
    let mut sc = cfg.interpolate;
    if a.points.is_some() || a.max_alpha.is_some() {
        let points = a.points.unwrap_or(sc.alphas.len());
        let max = a.max_alpha.unwrap_or_else(|| sc.alphas.last().copied().unwrap_or(1.5));
        sc.alphas = linspace(max, points);
    }
    if let Some(e) = a.episodes {
        sc.eval_episodes = e;
    }
    if a.label.is_some() {
        sc.label = parse_label(a.label.as_deref())?;
    }
    let model = open_model(&a.model)?;
    let zoo = open_zoo(&a.zoo)?;
    let ra = find_record(&zoo, a.id_a)?;
    let rb = find_record(&zoo, a.id_b)?;
    let prov = Provenance::new(
        "interpolate",
        seed,
        &json!({
            "interpolate": sc,
            "reference_states": cfg.convergence.reference_states,
            "model": path_str(&a.model),
            "zoo": path_str(&a.zoo),
            "id_a": a.id_a,
            "id_b": a.id_b,
        }),
    )?;
    let rng = Rng::new(labeled_seed(seed, "interpolate"));
    let result = sweep(&model, &ra.weights, &rb.weights, &sc, &mut rng.fork_labeled("sweep"))?;

    let refs = collect_reference_states(&zoo, cfg.convergence.reference_states, &mut rng.fork_labeled("refs"))?;
    let na = CartPoleNet::devectorize(&ra.weights)?;
    let nb = CartPoleNet::devectorize(&rb.weights)?;
    let cd_h = convergence_distance(&na, &nb, &refs, Layer::Hidden)?;
    let cd_o = convergence_distance(&na, &nb, &refs, Layer::Output)?;

    let mut body = format!(
        "# endpoints: a={} (stored {}), b={} (stored {}); decoded survival a={} b={}\n# cd_hidden_mean: {}\n# cd_output_mean: {}\n",
        ra.id, ra.survival_time, rb.id, rb.survival_time, result.endpoint_a, result.endpoint_b, cd_h.mean, cd_o.mean
    );
    body.push_str(&result.to_csv());
    write_csv(&a.out, &prov, &body)?;
    println!(
        "{} points; decoded endpoints {:.2} -> {:.2}; CD hidden {:.3}, output {:.3}",
        result.records.len(),
        result.endpoint_a,
        result.endpoint_b,
        cd_h.mean,
        cd_o.mean
    );
    Ok(())
}

pub fn repair_sweep(a: RepairArgs) -> CliResult<()> {
    let (cfg, seed) = setup(&a.common)?;
    let mut rc = cfg.repair;
    if let Some(t) = a.trials {
        rc.trials = t;
    }
    if let Some(b) = a.sample_budget {
        rc.repair.sample_budget = b;
    }
    if let Some(k) = a.top_k {
        rc.repair.top_k = k;
    }
    if let Some(t) = a.tolerance {
        rc.repair.tolerance = t;
    }
    if a.label.is_some() {
        rc.repair.label = parse_label(a.label.as_deref())?;
    }
    positive("trials", rc.trials)?;
    positive("eval_episodes", rc.repair.eval_episodes)?;
    let model = open_model(&a.model)?;
    let zoo = open_zoo(&a.zoo)?;
    let record = find_record(&zoo, a.id)?;
    if model.is_conditional() && rc.repair.label.is_none() {
        rc.repair.label = Some(record.group);
    }
    let prov = Provenance::new(
        "repair-sweep",
        seed,
        &json!({
            "repair": rc,
            "model": path_str(&a.model),
            "zoo": path_str(&a.zoo),
            "id": a.id,
        }),
    )?;
    let rows = run_repair_sweep(
        &record.weights,
        &model,
        Some(&zoo),
        &rc.fractions,
        &[Criterion::Missing, Criterion::Whole],
        rc.trials,
        &rc.repair,
        &mut Rng::new(labeled_seed(seed, "repair-sweep")),
    )?;
    write_csv(&a.out, &prov, &sweep_csv(&rows))?;
    let successes = rows.iter().filter(|r| r.success).count();
    println!("{} repairs, {successes} within tolerance", rows.len());
    Ok(())
}

fn fraction_tag(f: f64) -> String {
    format!("{f}")
}

pub fn efficiency_sweep(a: EfficiencyArgs) -> CliResult<()> {
    let (cfg, seed) = setup(&a.common)?;
    let fractions = a.fractions.clone().unwrap_or(cfg.efficiency.fractions.clone());
    if fractions.is_empty() {
        return Err(CliError::Usage("no fractions given".into()));
    }
    positive("bins", cfg.sample.hist_bins)?;
    let zoo = open_zoo(&a.zoo)?;
    let mut sizes = Vec::with_capacity(fractions.len());
    for &f in &fractions {
        if !(f > 0.0 && f <= 1.0) {
            return Err(CliError::Usage(format!("fraction {f} outside (0, 1]")));
        }
        let n = (f * zoo.len() as f64).round() as usize;
        if n < cfg.train_gen.batch_size {
            return Err(CliError::Usage(format!(
                "fraction {f} keeps {n} of {} records, fewer than one batch of {}",
                zoo.len(),
                cfg.train_gen.batch_size
            )));
        }
        sizes.push(n);
    }
    let prov = Provenance::new(
        "efficiency-sweep",
        seed,
        &json!({
            "fractions": fractions,
            "train_gen": cfg.train_gen,
            "sample": cfg.sample,
            "zoo": path_str(&a.zoo),
        }),
    )?;
    let trainset = zoo.survival_times();
    write_csv(
        &a.out_dir.join("hist_trainset.csv"),
        &prov,
        &hist_csv(&trainset, cfg.sample.hist_bins),
    )?;
    let mut summary = String::from("fraction,records,mean,std,w1_to_trainset\n");
    for (&f, &n) in fractions.iter().zip(&sizes) {
        let sub = if n == zoo.len() {
            zoo.clone()
        } else {
            subset(&zoo, None, Some(n), labeled_seed(seed, "efficiency"))
        };
        let trained = fit(&sub, &cfg.train_gen, &mut Rng::new(labeled_seed(seed, "train-gen")))?;
        // Sample from the model exactly as it would be stored on disk.
        let model = trained.model.quantized();
        let sts = draw_and_eval(&model, Some(&sub), &cfg.sample, seed)?;
        let tag = fraction_tag(f);
        write_csv(&a.out_dir.join(format!("samples_{tag}.csv")), &prov, &samples_csv(&sts))?;
        write_csv(
            &a.out_dir.join(format!("hist_{tag}.csv")),
            &prov,
            &hist_csv(&sts, cfg.sample.hist_bins),
        )?;
        let s = stats::summarize(&sts);
        let w1 = wasserstein1(&sts, &trainset);
        let _ = writeln!(summary, "{f},{n},{},{},{w1}", s.mean, s.std);
        println!("fraction {tag}: {n} records, mean survival {:.2}, W1 to trainset {:.2}", s.mean, w1);
    }
    write_csv(&a.out_dir.join("efficiency.csv"), &prov, &summary)?;
    Ok(())
}

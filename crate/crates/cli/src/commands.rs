use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ran_core::corpus::{generate_corpus, split_corpus, Corpus, SplitRatios, TaskKind};
use ran_core::datrn::{self, demos, RbfTrajectoryModel, Trajectory};
use ran_core::dmp;
use ran_core::embed::HashedEmbedder;
use ran_core::executor::{run_suite, Executor, Outcome};
use ran_core::seqmodel::checkpoint::{Checkpoint, HASHED_EMBEDDER};
use ran_core::seqmodel::metrics::evaluate;
use ran_core::seqmodel::predict::Lexicon;
use ran_core::seqmodel::train::{train, Dataset};
use ran_core::seqmodel::{ModelDims, SequenceModel};
use ran_core::vision::{analyze_scene, locate, LinePrompter, Prompter, Scene, ScriptedPrompter};
use serde_json::json;

use crate::args::*;
use crate::report::{Config, RunReport};

pub enum Status {
    Ok,
    DomainFailure,
}

pub fn dispatch(cli: Cli, argv: Vec<String>) -> Result<Status> {
    let mut cfg = Config::load(cli.config.as_deref())?;
    cfg.reseed(cli.seed);
    let seed = cli.seed;
    let (results, status) = match cli.command {
        Command::Corpus(c) => (corpus(c, &cfg, seed)?, Status::Ok),
        Command::Model(c) => model(c, &cfg, seed)?,
        Command::Traj(c) => (traj(c, &cfg)?, Status::Ok),
        Command::Scene(c) => (scene(c, &cfg)?, Status::Ok),
        Command::Run(c) => run(c, &cfg, seed)?,
        Command::Plot(c) => (plot(c, &cfg)?, Status::Ok),
    };
    let report = RunReport::new(argv, &cfg, results);
    match &cli.report {
        Some(p) => write(p, &report.to_json())?,
        None => {
            use std::io::Write;
            let _ = writeln!(std::io::stdout(), "{}", report.to_json());
        }
    }
    Ok(status)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_corpus(path: &Path) -> Result<Corpus> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Corpus::from_jsonl(&text).with_context(|| format!("parsing {}", path.display()))
}

fn task_counts(c: &Corpus) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for ex in &c.examples {
        *m.entry(ex.task_kind.to_string()).or_insert(0) += 1;
    }
    m
}

fn corpus(cmd: CorpusCmd, cfg: &Config, seed: u64) -> Result<serde_json::Value> {
    match cmd {
        CorpusCmd::Generate { n, out } => {
            let c = generate_corpus(&cfg.templates, n, seed)?;
            write(&out, &c.to_jsonl())?;
            Ok(json!({ "examples": c.len(), "tasks": task_counts(&c), "out": out }))
        }
        CorpusCmd::Split { corpus, out_dir, ratios } => {
            let c = read_corpus(&corpus)?;
            let ratios = parse_ratios(&ratios)?;
            let (tr, va, te) = split_corpus(&c, ratios, seed)?;
            let mut sizes = BTreeMap::new();
            for (name, part) in [("train", &tr), ("val", &va), ("test", &te)] {
                write(&out_dir.join(format!("{name}.jsonl")), &part.to_jsonl())?;
                sizes.insert(name, part.len());
            }
            Ok(json!({ "sizes": sizes, "out_dir": out_dir }))
        }
    }
}

/// `reference`, or three non-negative weights that are normalized to sum to one.
fn parse_ratios(s: &str) -> Result<SplitRatios> {
    if s == "reference" {
        return Ok(SplitRatios::reference());
    }
    let w: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>()?;
    let [a, b, c] = w[..] else { bail!("expected three split weights, got `{s}`") };
    let sum = a + b + c;
    if !(sum > 0.0) {
        bail!("split weights must have a positive sum");
    }
    Ok(SplitRatios::new(a / sum, b / sum, c / sum)?)
}

fn load_predictor(path: &Path) -> Result<ran_core::seqmodel::predict::Predictor> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok(ck.into_predictor()?)
}

fn model(cmd: ModelCmd, cfg: &Config, seed: u64) -> Result<(serde_json::Value, Status)> {
    match cmd {
        ModelCmd::Train { train: train_path, val, test, out, dims, epochs, lr, lambda } => {
            let dims = match dims {
                DimsChoice::Reference => ModelDims::reference(),
                DimsChoice::Compact => ModelDims::compact(),
            };
            let mut tc = cfg.train.clone();
            if let Some(e) = epochs {
                tc.max_epochs = e;
            }
            if let Some(lr) = lr {
                tc.lr = lr;
            }
            if let Some(l) = lambda {
                tc.lambda_recon = l;
            }
            let emb = HashedEmbedder { dim: dims.input };
            let tr = read_corpus(&train_path)?;
            let va = read_corpus(&val)?;
            let trd = Dataset::from_corpus(&tr, &emb, dims.seq_len)?;
            let vad = Dataset::from_corpus(&va, &emb, dims.seq_len)?;
            let model = SequenceModel::new(dims, seed)?;
            let (model, history) = train(model, &trd, &vad, &tc)?;
            let test_metrics = match &test {
                Some(p) => Some(evaluate(&model, &Dataset::from_corpus(&read_corpus(p)?, &emb, dims.seq_len)?)?),
                None => None,
            };
            let ck = Checkpoint {
                model,
                train_config: Some(tc),
                corpus_seed: Some(tr.seed),
                vocab: tr.vocab.clone(),
                lexicon: Lexicon::from_templates(&cfg.templates),
                embedder: HASHED_EMBEDDER.into(),
                history: Some(history.clone()),
            };
            ck.save(&out)?;
            Ok((json!({ "checkpoint": out, "history": history, "test": test_metrics }), Status::Ok))
        }
        ModelCmd::Eval { checkpoint, test } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let emb = HashedEmbedder { dim: ck.model.dims.input };
            let ds = Dataset::from_corpus(&read_corpus(&test)?, &emb, ck.model.dims.seq_len)?;
            Ok((json!({ "metrics": evaluate(&ck.model, &ds)? }), Status::Ok))
        }
        ModelCmd::Predict { checkpoint, text } => {
            let p = load_predictor(&checkpoint)?;
            let pred = p.predict(&text)?;
            let actions: Vec<String> = pred.actions.iter().map(|a| a.to_string()).collect();
            Ok((json!({ "actions": actions, "prediction": pred }), Status::Ok))
        }
    }
}

fn demo(name: &str) -> Result<Trajectory> {
    if let Some(t) = demos::by_name(name) {
        return Ok(t);
    }
    Trajectory::load(Path::new(name)).with_context(|| format!("loading demo {name}"))
}

fn parse_point(s: &str) -> Result<[f64; 3]> {
    let v: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| anyhow!("expected `x,y,z`, got `{s}`"))
}

fn traj(cmd: TrajCmd, cfg: &Config) -> Result<serde_json::Value> {
    match cmd {
        TrajCmd::Fit { demo: d, out } => {
            let t = demo(&d.demo)?;
            let (m, secs) = datrn::fit_timed(&t, &cfg.datrn)?;
            write(&out, &serde_json::to_string_pretty(&m)?)?;
            Ok(json!({ "model": out, "fit_seconds": secs.as_secs_f64(), "samples": t.len() }))
        }
        TrajCmd::Rollout { model, start, goal, steps, out } => {
            let text = std::fs::read_to_string(&model).with_context(|| format!("reading {}", model.display()))?;
            let m: RbfTrajectoryModel = serde_json::from_str(&text)?;
            let y0 = parse_point(&start)?;
            let g = match goal {
                Some(s) => parse_point(&s)?,
                None => m.goal,
            };
            let n = steps.unwrap_or_else(|| (m.duration / m.dt).round() as usize);
            let r = datrn::rollout(&m, y0, g, n)?;
            r.save(&out)?;
            Ok(json!({ "out": out, "samples": r.len(), "final": r.last() }))
        }
        TrajCmd::Compare { demo: d, overlay } => {
            let t = demo(&d.demo)?;
            let c = dmp::compare(&t, &cfg.datrn, &cfg.ga)?;
            if let Some(p) = overlay {
                write(&p, &dmp::overlay_csv(&t, &c.datrn_rollout, &c.dmp_rollout))?;
            }
            Ok(json!({ "comparison": c.report }))
        }
    }
}

fn load_scene(path: Option<&Path>) -> Result<Scene> {
    match path {
        Some(p) => Scene::load(p).with_context(|| format!("loading scene {}", p.display())),
        None => Ok(Scene::kitchen()),
    }
}

fn scene(cmd: SceneCmd, cfg: &Config) -> Result<serde_json::Value> {
    match cmd {
        SceneCmd::Validate { scene } => {
            let s = load_scene(Some(&scene))?;
            Ok(json!({ "valid": true, "objects": s.objects.len() }))
        }
        SceneCmd::Show { scene } => {
            let s = load_scene(scene.as_deref())?;
            let rows: Vec<serde_json::Value> = s
                .objects
                .iter()
                .map(|o| match analyze_scene(&s, &o.label, cfg.episode.confidence_threshold) {
                    Ok(d) => json!({ "label": o.label, "detection": d, "located": locate(&s, &d) }),
                    Err(r) => json!({ "label": o.label, "not_found": r }),
                })
                .collect();
            Ok(json!({ "objects": rows }))
        }
    }
}

fn run(cmd: RunCmd, cfg: &Config, seed: u64) -> Result<(serde_json::Value, Status)> {
    let ex = Executor::new(cfg.episode.clone())?;
    match cmd {
        RunCmd::Episode { instruction, scene, checkpoint, answers } => {
            let s = load_scene(scene.as_deref())?;
            let p = load_predictor(&checkpoint)?;
            let mut prompter: Box<dyn Prompter> = match answers {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    Box::new(ScriptedPrompter::new(text.lines().map(str::trim).filter(|l| !l.is_empty())))
                }
                None => Box::new(LinePrompter { input: BufReader::new(std::io::stdin()), output: std::io::stderr() }),
            };
            let r = ex.run_episode(&instruction, &s, &p, prompter.as_mut());
            let status = if r.outcome == Outcome::Success { Status::Ok } else { Status::DomainFailure };
            Ok((json!({ "episode": r }), status))
        }
        RunCmd::Suite { tasks, trials, checkpoint, jobs, absent } => {
            let kinds: Vec<TaskKind> = tasks.iter().map(|t| t.parse()).collect::<Result<_, _>>()?;
            if trials == 0 {
                bail!("--trials must be at least 1");
            }
            let p = load_predictor(&checkpoint)?;
            let report = run_suite(&ex, &p, &kinds, trials, seed, absent, jobs)?;
            let mut table = String::from("task,trials,successes,prediction_s,execution_s,sim_s\n");
            for s in &report.summaries {
                let _ = writeln!(
                    table,
                    "{},{},{},{:.4},{:.4},{:.2}",
                    s.task, s.trials, s.successes, s.mean_prediction_seconds, s.mean_execution_seconds, s.mean_sim_seconds
                );
            }
            eprint!("{table}");
            Ok((json!({ "suite": report }), Status::Ok))
        }
    }
}

fn plot(cmd: PlotCmd, cfg: &Config) -> Result<serde_json::Value> {
    let (out, csv): (PathBuf, String) = match cmd {
        PlotCmd::Loss { checkpoint, out } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let h = ck.history.ok_or_else(|| anyhow!("checkpoint has no training history"))?;
            let mut s = String::from("epoch,train_loss,val_loss,lr\n");
            let _ = writeln!(s, "0,{},{},", h.initial_train_loss, h.initial_val_loss);
            for e in &h.epochs {
                let _ = writeln!(s, "{},{},{},{}", e.epoch, e.train_loss, e.val_loss, e.lr);
            }
            (out, s)
        }
        PlotCmd::Confusion { checkpoint, test, out } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let emb = HashedEmbedder { dim: ck.model.dims.input };
            let ds = Dataset::from_corpus(&read_corpus(&test)?, &emb, ck.model.dims.seq_len)?;
            let m = evaluate(&ck.model, &ds)?;
            let names: Vec<&str> = ck.vocab.kinds().iter().map(|k| k.name()).collect();
            let mut s = format!("true\\predicted,{}\n", names.join(","));
            for (i, row) in m.confusion.rows().into_iter().enumerate() {
                let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(s, "{},{}", names[i], cells.join(","));
            }
            (out, s)
        }
        PlotCmd::TrajOverlay { demo: d, out } => {
            let t = demo(&d.demo)?;
            let c = dmp::compare(&t, &cfg.datrn, &cfg.ga)?;
            (out, dmp::overlay_csv(&t, &c.datrn_rollout, &c.dmp_rollout))
        }
        PlotCmd::GoalAdapt { demo: d, goals, out } => {
            let t = demo(&d.demo)?;
            let m = datrn::fit(&t, &cfg.datrn)?;
            let goals: Vec<[f64; 3]> = match goals {
                Some(s) => s.split(';').map(parse_point).collect::<Result<_>>()?,
                None => {
                    let g = t.last();
                    vec![g, [g[0] + 0.1, g[1], g[2]], [g[0], g[1] - 0.1, g[2]], [g[0], g[1], g[2] + 0.1]]
                }
            };
            let mut s = String::from("goal,t,x,y,z\n");
            for (i, g) in goals.iter().enumerate() {
                let r = datrn::rollout(&m, t.first(), *g, t.len() - 1)?;
                for (k, p) in r.samples.iter().enumerate() {
                    let _ = writeln!(s, "{i},{},{},{},{}", k as f64 * r.dt, p[0], p[1], p[2]);
                }
            }
            (out, s)
        }
    };
    write(&out, &csv)?;
    Ok(json!({ "out": out, "rows": csv.lines().count().saturating_sub(1) }))
}

use std::fs::File;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use icsflow::dataset::{
    clean_dataset_file, dataset_stats_file, load_prepared, meta_path, minmax_normalize, pca_project, split_dataset,
    write_prepared, CleanOptions, DatasetMatrix, PreparedMeta, SplitMode, SplitTag, PREPARED_FORMAT_VERSION,
};
use icsflow::eval::{compute_metrics, confusion_matrix, render_report, reports_to_json};
use icsflow::flow::{read_flow_csv, write_flows, FlowGenerator};
use icsflow::label::{label_flows, parse_attack_log};
use icsflow::models::{reference_spec, search, search_grid, ModelArtifact, ModelKind, ModelSpec};
use icsflow::packet::read_pcap;
use icsflow::select::{mrmr_rank, read_selected, select_by_threshold, write_selected};
use icsflow::synth::{synth_attack_log, synth_trace, TraceScript};

use crate::output::{check_writable, write_atomic};
use crate::{
    Command, EvaluateArgs, FlowsArgs, LabelArgs, PcaArgs, Preset, PrepareArgs, SelectArgs, SplitArg, StatsArgs,
    SynthArgs, TrainArgs,
};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Flows(a) => flows(a),
        Command::Label(a) => label(a),
        Command::Stats(a) => stats(a),
        Command::Prepare(a) => prepare(a),
        Command::Select(a) => select(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Pca(a) => pca(a),
        Command::Synth(a) => synth(a),
    }
}

impl From<SplitArg> for SplitTag {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => SplitTag::Train,
            SplitArg::Val => SplitTag::Val,
            SplitArg::Test => SplitTag::Test,
        }
    }
}

fn flows(a: FlowsArgs) -> Result<()> {
    check_writable(&[&a.out], a.overwrite.force)?;
    let mut stream = read_pcap(&a.pcap)?;
    let mut generator = FlowGenerator::new(a.interval)?;
    let mut flows = Vec::new();
    for pkt in stream.by_ref() {
        let pkt = pkt.with_context(|| format!("reading {}", a.pcap.display()))?;
        flows.extend(generator.push(&pkt));
    }
    let (rest, gen_stats) = generator.finish();
    flows.extend(rest);
    let read_stats = stream.stats();
    if read_stats.warnings() > 0 {
        log::warn!(
            "{} records skipped, {} malformed frames, truncated tail: {}",
            read_stats.skipped_records,
            read_stats.malformed_frames,
            read_stats.truncated_tail
        );
    }
    let mut buf = Vec::new();
    let n = write_flows(&mut buf, &flows)?;
    write_atomic(&a.out, &buf)?;
    println!(
        "{n} flows from {} packets ({} discarded) written to {}",
        gen_stats.packets_seen,
        gen_stats.packets_discarded,
        a.out.display()
    );
    Ok(())
}

fn label(a: LabelArgs) -> Result<()> {
    check_writable(&[&a.out], a.overwrite.force)?;
    let mut flows = read_flow_csv(&a.flows)?;
    let log = parse_attack_log(&a.attacks)?;
    let report = label_flows(&mut flows, &log);
    if report.ambiguous > 0 {
        log::warn!("{} flows overlap more than one attack window", report.ambiguous);
    }
    let mut buf = Vec::new();
    write_flows(&mut buf, &flows)?;
    write_atomic(&a.out, &buf)?;
    println!(
        "{} flows labeled ({} IT attack, {} NST attack) from {} attack windows, written to {}",
        report.flows,
        report.it_attack,
        report.nst_attack,
        log.entries.len(),
        a.out.display()
    );
    Ok(())
}

fn stats(a: StatsArgs) -> Result<()> {
    let stats = dataset_stats_file(&a.flows)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&stats)?);
    } else {
        print!("{}", stats.render_text());
    }
    Ok(())
}

fn prepare(a: PrepareArgs) -> Result<()> {
    let meta_out = meta_path(&a.out);
    check_writable(&[&a.out, &meta_out], a.overwrite.force)?;
    let fractions: [f64; 3] = a.fractions.as_slice().try_into().context("--fractions needs three values")?;
    let opts = CleanOptions {
        allow_extra_columns: a.allow_extra_columns,
    };
    let mut m = clean_dataset_file(&a.flows, a.task, a.scheme, &opts)?;
    let mode = if a.chronological {
        SplitMode::Chronological
    } else {
        SplitMode::Random
    };
    split_dataset(&mut m, fractions, a.seed, mode)?;
    let normalization = minmax_normalize(&mut m)?;
    let meta = PreparedMeta {
        format_version: PREPARED_FORMAT_VERSION,
        scheme: a.scheme,
        task: a.task,
        seed: a.seed,
        fractions,
        chronological: a.chronological,
        class_names: m.class_names.clone(),
        normalization,
    };
    let mut buf = Vec::new();
    write_prepared(&mut buf, &m)?;
    write_atomic(&a.out, &buf)?;
    write_atomic(&meta_out, serde_json::to_string_pretty(&meta)?.as_bytes())?;
    let [tr, va, te] = m.split_sizes().unwrap_or_default();
    println!(
        "{} rows, {} features, classes {:?}; train {tr}, val {va}, test {te}; written to {}",
        m.n_rows(),
        m.column_names.len(),
        m.class_names,
        a.out.display()
    );
    Ok(())
}

fn restrict(m: DatasetMatrix, features: Option<&Path>) -> Result<DatasetMatrix> {
    let Some(path) = features else {
        return Ok(m);
    };
    let file = File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
    let names = read_selected(file)?;
    Ok(m.with_columns(&names)?)
}

fn select(a: SelectArgs) -> Result<()> {
    let mut outs = vec![a.out.as_path()];
    outs.extend(a.ranking.as_deref());
    check_writable(&outs, a.overwrite.force)?;
    let (m, _) = load_prepared(&a.data)?;
    let (x, y) = m.part(SplitTag::Train)?;
    let ranking = mrmr_rank(x.view(), &y, &m.column_names, a.bins)?;
    let selected = select_by_threshold(&ranking, a.tau)?;
    print!("{}", ranking.render_text());
    let mut buf = Vec::new();
    write_selected(&mut buf, &selected)?;
    write_atomic(&a.out, &buf)?;
    if let Some(path) = &a.ranking {
        let mut buf = Vec::new();
        ranking.write_csv(&mut buf)?;
        write_atomic(path, &buf)?;
    }
    println!(
        "{} of {} features selected at tau {} ({} bins), written to {}",
        selected.len(),
        ranking.features.len(),
        a.tau,
        a.bins,
        a.out.display()
    );
    Ok(())
}

fn configured_spec(a: &TrainArgs, kind: ModelKind, base: ModelSpec) -> Result<ModelSpec> {
    let forest_or_tree = a.criterion.is_some() || a.max_splits.is_some();
    let forest_only = a.learners.is_some() || a.predictors.is_some() || a.no_bootstrap;
    let mlp_only = a.layers.is_some()
        || a.activation.is_some()
        || a.epochs.is_some()
        || a.learning_rate.is_some()
        || a.batch_size.is_some();
    match kind {
        ModelKind::Dt if forest_only || mlp_only => bail!("only --criterion and --max-splits apply to dt"),
        ModelKind::Rf if mlp_only => bail!("network options do not apply to rf"),
        ModelKind::Ann if forest_or_tree || forest_only => bail!("tree options do not apply to ann"),
        _ => {}
    }
    Ok(match base {
        ModelSpec::Tree(mut p) => {
            p.criterion = a.criterion.unwrap_or(p.criterion);
            p.max_splits = a.max_splits.unwrap_or(p.max_splits);
            ModelSpec::Tree(p)
        }
        ModelSpec::Forest(mut p) => {
            p.criterion = a.criterion.unwrap_or(p.criterion);
            p.max_splits = a.max_splits.unwrap_or(p.max_splits);
            p.n_learners = a.learners.unwrap_or(p.n_learners);
            p.predictors_to_sample = a.predictors.unwrap_or(p.predictors_to_sample);
            p.bootstrap = !a.no_bootstrap;
            ModelSpec::Forest(p)
        }
        ModelSpec::Mlp(mut p) => {
            p.hidden = a.layers.clone().unwrap_or(p.hidden);
            p.activation = a.activation.unwrap_or(p.activation);
            p.epochs = a.epochs.unwrap_or(p.epochs);
            p.learning_rate = a.learning_rate.unwrap_or(p.learning_rate);
            p.batch_size = a.batch_size.unwrap_or(p.batch_size);
            ModelSpec::Mlp(p)
        }
    })
}

fn train(a: TrainArgs) -> Result<()> {
    check_writable(&[&a.out], a.overwrite.force)?;
    let (m, meta) = load_prepared(&a.data)?;
    let m = restrict(m, a.features.as_deref())?;
    let kind = ModelKind::from(a.model);
    let p = m.column_names.len();
    let (xtr, ytr) = m.part(SplitTag::Train)?;
    let (xva, yva) = m.part(SplitTag::Val)?;
    let model = if a.search {
        let grid = search_grid(kind, meta.task, p, a.seed);
        let (model, entries) = search(&grid, (xtr.view(), &ytr), (xva.view(), &yva), &m.class_names)?;
        for e in &entries {
            println!("{}: validation accuracy {:.4}, macro F1 {:.4}", e.spec, e.val_accuracy, e.val_macro_f1);
        }
        model
    } else {
        let spec = configured_spec(&a, kind, reference_spec(kind, meta.task, p, a.seed))?;
        log::info!("training {spec} on {} rows, {p} features", ytr.len());
        spec.fit(xtr.view(), &ytr, m.n_classes())?
    };
    println!("{}", model.describe());
    if !yva.is_empty() {
        let pred = model.predict(xva.view())?;
        let r = compute_metrics(&confusion_matrix(&yva, &pred, &m.class_names)?)?;
        println!("validation accuracy {:.4}, macro F1 {:.4}", r.accuracy, r.macro_f1);
    }
    let mut artifact = ModelArtifact::new(model, m.column_names.clone(), m.class_names.clone());
    artifact.task = Some(meta.task);
    artifact.scheme = Some(meta.scheme);
    artifact.normalization = Some(meta.normalization);
    write_atomic(&a.out, artifact.to_json().as_bytes())?;
    println!("model written to {}", a.out.display());
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    if let Some(j) = &a.json {
        check_writable(&[j], a.overwrite.force)?;
    }
    let artifact = ModelArtifact::load(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let (m, meta) = load_prepared(&a.data)?;
    ensure!(
        artifact.class_names == m.class_names,
        "model classes {:?} differ from dataset classes {:?}",
        artifact.class_names,
        m.class_names
    );
    if artifact.task.is_some_and(|t| t != meta.task) || artifact.scheme.is_some_and(|s| s != meta.scheme) {
        log::warn!("model was trained for a different task or labeling scheme than this dataset");
    }
    let m = m.with_columns(&artifact.feature_names)?;
    let tag = SplitTag::from(a.split);
    let (x, y) = m.part(tag)?;
    ensure!(!y.is_empty(), "the {} split is empty", tag.as_str());
    let pred = artifact.model.predict(x.view())?;
    let mut report = compute_metrics(&confusion_matrix(&y, &pred, &m.class_names)?)?;
    report.model = artifact.model.kind().label().to_string();
    let reports = [report];
    println!("{} split, {} rows", tag.as_str(), y.len());
    print!("{}", render_report(&reports));
    if let Some(j) = &a.json {
        write_atomic(j, reports_to_json(&reports).as_bytes())?;
    }
    Ok(())
}

fn pca(a: PcaArgs) -> Result<()> {
    check_writable(&[&a.out], a.overwrite.force)?;
    let (m, _) = load_prepared(&a.data)?;
    let (x, y) = m.part(SplitTag::from(a.split))?;
    let pca = pca_project(x.view(), a.components)?;
    let mut out = String::from("label");
    for k in 1..=a.components {
        out.push_str(&format!(",pc{k}"));
    }
    out.push('\n');
    for (row, &label) in pca.coords.rows().into_iter().zip(&y) {
        out.push_str(&m.class_names[label]);
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    write_atomic(&a.out, out.as_bytes())?;
    let ratios: Vec<String> = pca.explained_variance_ratio().iter().map(|r| format!("{:.4}", r)).collect();
    println!("explained variance ratio {}; {} rows written to {}", ratios.join(", "), y.len(), a.out.display());
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut outs = vec![a.out.as_path()];
    outs.extend(a.attacks.as_deref());
    outs.extend(a.manifest.as_deref());
    check_writable(&outs, a.overwrite.force)?;
    let script = match &a.script {
        Some(path) => TraceScript::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => match a.preset {
            Preset::Benign => TraceScript::benign(a.seed, a.duration),
            Preset::AllAttacks => TraceScript::all_attacks(a.seed, a.duration),
        },
    };
    let (pcap, manifest) = synth_trace(&script)?;
    write_atomic(&a.out, &pcap)?;
    if let Some(path) = &a.attacks {
        let mut buf = Vec::new();
        synth_attack_log(&mut buf, &script)?;
        write_atomic(path, &buf)?;
    }
    if let Some(path) = &a.manifest {
        write_atomic(path, manifest.to_json().as_bytes())?;
    }
    println!(
        "{} packets ({} benign), {} attack phases, {} ground-truth flows; capture written to {}",
        manifest.total_packets,
        manifest.benign_packets,
        manifest.phases.len(),
        manifest.flows.len(),
        a.out.display()
    );
    Ok(())
}

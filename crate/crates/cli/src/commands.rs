use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use bet_core::data::{
    generate_heterogeneous_regression, generate_simulation, load_csv, CsvOptions, KindSpec, SimSpec,
};
use bet_core::{
    evaluate, run_chain, ChainConfig, EnsembleSnapshot, OutcomeKind, PredictMode, Prediction,
    Study, Trace,
};
use serde_json::json;

use crate::args::{FitArgs, Kind, Mode, PredictArgs, RankArgs, ReportArgs, SimulateArgs};
use crate::manifest::{sidecar, write_file, RunManifest};
use crate::CliError;

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(CliError::runtime)?;
    for r in rows {
        w.write_record(r).map_err(CliError::runtime)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn csv_header(path: &Path) -> Result<Vec<String>, CliError> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    let header = rdr.headers().map_err(CliError::runtime)?;
    Ok(header.iter().map(|h| h.trim().to_string()).collect())
}

fn csv_column(path: &Path, name: &str) -> Result<Vec<String>, CliError> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    let idx = csv_header(path)?
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::usage(format!("missing column `{name}`")))?;
    rdr.records()
        .map(|r| {
            r.map(|r| r.get(idx).unwrap_or("").trim().to_string())
                .map_err(CliError::runtime)
        })
        .collect()
}

fn print_json(value: &serde_json::Value) {
    println!("{value}");
}

pub fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let (data, config) = match a.study {
        Some(n) => {
            let study =
                Study::from_number(n).ok_or_else(|| CliError::usage("study must be 1, 2 or 3"))?;
            let data = generate_simulation(&SimSpec::new(study, a.seed));
            (data, json!({ "study": n, "seed": a.seed }))
        }
        None => {
            let data = generate_heterogeneous_regression(a.subjects, a.entries, a.seed)?;
            let config = json!({
                "heterogeneous": true,
                "subjects": a.subjects,
                "entries": a.entries,
                "seed": a.seed,
            });
            (data, config)
        }
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    data.save_csv(&a.out)?;
    let mut manifest = RunManifest::new("simulate", config);
    manifest.output(a.out.display().to_string(), &a.out)?;
    manifest.elapsed_seconds = start.elapsed().as_secs_f64();
    manifest.write(&sidecar(&a.out))?;
    print_json(&json!({ "rows": data.n_rows(), "covariates": data.n_cols(), "out": a.out }));
    Ok(())
}

fn resolve_config(a: &FitArgs) -> Result<ChainConfig, CliError> {
    let mut c = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            toml::from_str::<ChainConfig>(&text)
                .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?
        }
        None => ChainConfig::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = a.$flag { c.$field = v; })*
        };
    }
    set!(iters => iterations, burnin => burn_in, thin => thinning, delta => delta,
         alpha => alpha, q => q, depth_cap => depth_cap, sweeps => sweeps,
         init_clusters => init_clusters, threads => threads, seed => seed);
    if a.single_tree {
        c.single_tree = true;
    }
    c.validate()?;
    Ok(c)
}

pub fn fit(a: &FitArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let config = resolve_config(a)?;
    let kind = match a.data.kind {
        Kind::Continuous => KindSpec::Continuous,
        Kind::Categorical => KindSpec::Categorical(a.data.classes),
    };
    let mut opts = CsvOptions::new(a.data.outcome.clone(), kind);
    opts.subject_column = a.data.subject_column.clone();
    opts.ignore_columns = a.data.ignore.clone();
    opts.min_rows = 2 * config.q;
    let data = load_csv(&a.data.data, &opts)?;

    let out = run_chain(&data, &config)?;
    let dir = &a.out_dir;
    create_dir(&dir.join("trees"))?;
    let mut manifest = RunManifest::new(
        "fit",
        json!({
            "chain": config,
            "data": {
                "outcome": a.data.outcome,
                "kind": data.kind(),
                "subject_column": a.data.subject_column,
                "ignore": a.data.ignore,
                "rows": data.n_rows(),
                "covariates": data.column_names(),
            },
        }),
    );
    manifest.input(&a.data.data)?;
    if let Some(p) = &a.config {
        manifest.input(p)?;
    }

    out.trace.save_csv(dir.join("trace.csv"))?;
    out.best.save_json(dir.join("best_snapshot.json"))?;
    out.last.save_json(dir.join("last_snapshot.json"))?;
    let mut written = vec![
        "trace.csv".to_string(),
        "best_snapshot.json".to_string(),
        "last_snapshot.json".to_string(),
    ];
    let counts = out.best.counts();
    let mut clusters = Vec::new();
    for j in out.best.established() {
        let tree = &out.best.clusters[j].tree;
        let title = format!(
            "cluster {j} (n = {}, w = {:.4})",
            counts[j], out.best.weights[j]
        );
        for (ext, text) in [
            (
                "txt",
                format!("{title}\n{}", tree.render_text(data.column_names())),
            ),
            ("dot", tree.to_dot(data.column_names(), &title)),
        ] {
            let name = format!("trees/cluster_{j}.{ext}");
            write_file(&dir.join(&name), text)?;
            written.push(name);
        }
        clusters.push(json!({
            "cluster": j,
            "rows": counts[j],
            "weight": out.best.weights[j],
            "leaves": tree.n_leaves(),
        }));
    }

    let (modal, share) = out.trace.modal_clusters()?;
    let summary = json!({
        "iterations": config.iterations,
        "retained": out.trace.n_retained(),
        "modal_clusters": modal,
        "modal_share": share,
        "cluster_histogram": out.trace.cluster_histogram(),
        "mean_conditional_loglik": out.trace.mean_conditional_loglik()?,
        "best": {
            "iteration": out.best.iteration,
            "score": out.best.score,
            "conditional_loglik": out.best.conditional_loglik,
            "clusters": clusters,
        },
        "variable_ranking": ranking(&out.best),
    });
    let text = serde_json::to_string_pretty(&summary).map_err(CliError::runtime)?;
    write_file(&dir.join("summary.json"), format!("{text}\n"))?;
    written.push("summary.json".into());

    for name in &written {
        manifest.output(name.clone(), &dir.join(name))?;
    }
    manifest.elapsed_seconds = start.elapsed().as_secs_f64();
    manifest.write(&dir.join("manifest.json"))?;
    print_json(&json!({
        "out_dir": dir,
        "modal_clusters": modal,
        "modal_share": share,
        "best_iteration": out.best.iteration,
        "elapsed_seconds": manifest.elapsed_seconds,
    }));
    Ok(())
}

fn ranking(snap: &EnsembleSnapshot) -> BTreeMap<String, f64> {
    snap.column_names
        .iter()
        .cloned()
        .zip(snap.variable_ranking())
        .collect()
}

fn prediction_header(kind: OutcomeKind, with_cluster: bool) -> Vec<String> {
    let mut h = vec!["row".to_string()];
    if with_cluster {
        h.push("cluster".into());
    }
    match kind {
        OutcomeKind::Continuous => h.extend(["mean", "lower", "upper"].map(String::from)),
        OutcomeKind::Categorical(k) => {
            h.extend(["class", "probability"].map(String::from));
            h.extend((0..k).map(|c| format!("p_{c}")));
        }
    }
    h
}

fn prediction_record(row: usize, cluster: Option<usize>, p: &Prediction) -> Vec<String> {
    let mut r = vec![row.to_string()];
    r.extend(cluster.map(|c| c.to_string()));
    match p {
        Prediction::Continuous { mean, lower, upper } => {
            r.extend([mean, lower, upper].map(|v| v.to_string()));
        }
        Prediction::Categorical { probs } => {
            let class = p.class().unwrap_or(0);
            r.push(class.to_string());
            r.push(probs[class].to_string());
            r.extend(probs.iter().map(|v| v.to_string()));
        }
    }
    r
}

pub fn predict(a: &PredictArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let snap = EnsembleSnapshot::load_json(&a.model)?;
    let header = csv_header(&a.data)?;
    let has = |name: &str| header.iter().any(|h| h == name);
    let is_covariate = |name: &str| snap.column_names.iter().any(|c| c == name);

    let kind = match snap.kind {
        OutcomeKind::Continuous => KindSpec::Continuous,
        OutcomeKind::Categorical(k) => KindSpec::Categorical(Some(k)),
    };
    let mut opts = CsvOptions::new(snap.outcome_name.clone(), kind);
    opts.outcome_optional = a.mode != Mode::Subject;
    opts.ignore_columns = a.ignore.clone();
    let has_outcome = has(&snap.outcome_name);
    if a.mode == Mode::Subject && !has(&a.subject_column) {
        return Err(CliError::usage(format!(
            "subject mode needs a `{}` column",
            a.subject_column
        )));
    }
    if has(&a.subject_column) && !is_covariate(&a.subject_column) {
        opts.subject_column = Some(a.subject_column.clone());
    }
    let clusters: Option<Vec<usize>> = if a.mode == Mode::Cluster {
        if !has(&a.cluster_column) {
            return Err(CliError::usage(format!(
                "cluster mode needs a `{}` column",
                a.cluster_column
            )));
        }
        let raw = csv_column(&a.data, &a.cluster_column)?;
        let parsed = raw
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.parse::<usize>()
                    .map_err(|_| CliError::runtime(format!("row {}: bad cluster id {v:?}", i + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Some(parsed)
    } else {
        None
    };
    if has(&a.cluster_column) && !is_covariate(&a.cluster_column) {
        opts.ignore_columns.push(a.cluster_column.clone());
    }
    let data = load_csv(&a.data, &opts)?;

    let (rows, preds, with_cluster): (Vec<usize>, Vec<Prediction>, bool) = match a.mode {
        Mode::Ensemble => (
            (0..data.n_rows()).collect(),
            snap.predict_rows(&data, PredictMode::Ensemble)?,
            false,
        ),
        Mode::Cluster => {
            let z = clusters.as_deref().expect("parsed above");
            (
                (0..data.n_rows()).collect(),
                snap.predict_rows(&data, PredictMode::Cluster(z))?,
                true,
            )
        }
        Mode::Subject => {
            let out = snap.predict_by_subject(&data, a.revealed)?;
            let (rows, preds) = out.into_iter().unzip();
            (rows, preds, false)
        }
    };
    let records: Vec<Vec<String>> = rows
        .iter()
        .zip(&preds)
        .map(|(&i, p)| {
            let cluster = clusters.as_ref().filter(|_| with_cluster).map(|z| z[i]);
            prediction_record(i, cluster, p)
        })
        .collect();
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_rows(
        &a.out,
        &prediction_header(snap.kind, with_cluster),
        &records,
    )?;

    let metrics = if has_outcome {
        let scores: Vec<f64> = preds.iter().map(Prediction::score).collect();
        let truth: Vec<f64> = rows.iter().map(|&i| data.outcome(i)).collect();
        Some(evaluate(&scores, &truth, snap.kind)?)
    } else {
        None
    };
    let mode = format!("{:?}", a.mode).to_lowercase();
    let mut manifest = RunManifest::new(
        "predict",
        json!({ "mode": mode, "revealed": a.revealed, "rows": rows.len() }),
    );
    manifest.input(&a.model)?;
    manifest.input(&a.data)?;
    manifest.output(a.out.display().to_string(), &a.out)?;
    manifest.elapsed_seconds = start.elapsed().as_secs_f64();
    manifest.write(&sidecar(&a.out))?;
    print_json(&json!({ "rows": rows.len(), "out": a.out, "metrics": metrics }));
    Ok(())
}

pub fn rank(a: &RankArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let snap = EnsembleSnapshot::load_json(&a.model)?;
    let mut pairs: Vec<(String, f64)> = snap
        .column_names
        .iter()
        .cloned()
        .zip(snap.variable_ranking())
        .collect();
    pairs.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| x.0.cmp(&y.0)));
    let records: Vec<Vec<String>> = pairs
        .iter()
        .map(|(name, p)| vec![name.clone(), p.to_string()])
        .collect();
    write_rows(
        &a.out,
        &["covariate".into(), "probability".into()],
        &records,
    )?;
    let mut manifest = RunManifest::new("rank", json!({}));
    manifest.input(&a.model)?;
    manifest.output(a.out.display().to_string(), &a.out)?;
    manifest.elapsed_seconds = start.elapsed().as_secs_f64();
    manifest.write(&sidecar(&a.out))?;
    print_json(&json!({ "ranking": pairs }));
    Ok(())
}

fn histogram_rows(hist: &BTreeMap<usize, usize>) -> Vec<Vec<String>> {
    let total: usize = hist.values().sum();
    hist.iter()
        .map(|(c, f)| {
            vec![
                c.to_string(),
                f.to_string(),
                (*f as f64 / total as f64).to_string(),
            ]
        })
        .collect()
}

pub fn report(a: &ReportArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let trace = Trace::load_csv(&a.trace)?;
    let (modal, share) = trace.modal_clusters()?;
    let dir = &a.out_dir;
    create_dir(dir)?;
    let hist_header: Vec<String> = ["clusters", "iterations", "share"]
        .map(String::from)
        .to_vec();

    write_rows(
        &dir.join("cluster_histogram.csv"),
        &hist_header,
        &histogram_rows(&trace.cluster_histogram()),
    )?;
    let mut occupied = BTreeMap::new();
    for r in trace.retained() {
        *occupied.entry(r.occupied).or_insert(0) += 1;
    }
    write_rows(
        &dir.join("occupied_histogram.csv"),
        &hist_header,
        &histogram_rows(&occupied),
    )?;

    let loglik: Vec<Vec<String>> = trace
        .rows
        .iter()
        .map(|r| {
            vec![
                r.iteration.to_string(),
                u8::from(r.retained).to_string(),
                r.joint_loglik.to_string(),
                r.conditional_loglik.to_string(),
            ]
        })
        .collect();
    write_rows(
        &dir.join("loglik.csv"),
        &[
            "iteration",
            "retained",
            "joint_loglik",
            "conditional_loglik",
        ]
        .map(String::from),
        &loglik,
    )?;

    let mut xi_header = vec!["iteration".to_string()];
    xi_header.extend(trace.covariates.iter().cloned());
    let xi_rows: Vec<Vec<String>> = trace
        .retained()
        .map(|r| {
            let mut row = vec![r.iteration.to_string()];
            row.extend(r.xi_bar.iter().map(|x| x.to_string()));
            row
        })
        .collect();
    write_rows(&dir.join("xi_bar.csv"), &xi_header, &xi_rows)?;

    let mean_xi: BTreeMap<String, f64> = trace
        .covariates
        .iter()
        .cloned()
        .zip(trace.mean_xi_bar()?)
        .collect();
    let summary = json!({
        "iterations": trace.rows.len(),
        "retained": trace.n_retained(),
        "modal_clusters": modal,
        "modal_share": share,
        "mean_conditional_loglik": trace.mean_conditional_loglik()?,
        "mean_xi_bar": mean_xi,
    });
    let text = serde_json::to_string_pretty(&summary).map_err(CliError::runtime)?;
    write_file(&dir.join("summary.json"), format!("{text}\n"))?;

    let mut manifest = RunManifest::new("report", json!({}));
    manifest.input(&a.trace)?;
    for name in [
        "cluster_histogram.csv",
        "occupied_histogram.csv",
        "loglik.csv",
        "xi_bar.csv",
        "summary.json",
    ] {
        manifest.output(name, &dir.join(name))?;
    }
    manifest.elapsed_seconds = start.elapsed().as_secs_f64();
    manifest.write(&dir.join("manifest.json"))?;
    print_json(&summary);
    Ok(())
}

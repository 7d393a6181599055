//! The subcommands, callable in-process.

use std::io::Write as _;

use anyhow::{Context, Result};
use spatiotag_core::corpus::{evaluate, parse_last_column, write_tagged, Corpus, Evaluation};

use crate::config::{ReportFormat, RunConfig};
use crate::data::{align_predictions, input_corpus, pool_and_test, test_corpus, training_corpus};
use crate::experiment::{comparison_table, simulate_all, svg_plot, write_curves};
use crate::pipeline::Decoding;
use crate::service::{serve as serve_http, AppState};
use crate::session::AnnotationSession;
use crate::tagger::{decoding, stats_csv, Tagger};

pub fn train(config: &RunConfig) -> Result<()> {
    let corpus = training_corpus(config)?;
    config.features.build()?.check(&corpus)?;
    let (tagger, stats) = Tagger::train(&corpus, config)?;
    tagger.save(&config.output.model)?;
    log::info!(
        "trained {} member(s) on {} sentences; model written to {}",
        tagger.output_model().k(),
        corpus.len(),
        config.output.model.display()
    );
    if let Some(path) = &config.output.stats {
        std::fs::write(path, stats_csv(&stats)).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

pub fn tag(config: &RunConfig) -> Result<()> {
    let tagger = Tagger::load(&config.output.model)?;
    let input = input_corpus(config)?;
    tagger.feature_config().check(&input)?;
    let predicted = tagger.tag(&input.sentences, decoding(config));
    let text = write_tagged(&input, &config.columns()?.without_gold(), &predicted, tagger.labels())?;
    match &config.output.tagged {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

/// Tags `gold` with `tagger` and scores the result.
pub fn evaluate_tagger(tagger: &Tagger, gold: &Corpus, decoding: Decoding) -> Result<Evaluation> {
    tagger.feature_config().check(gold)?;
    let predicted = tagger.tag(&gold.sentences, decoding);
    let names: Vec<Vec<String>> = predicted
        .iter()
        .map(|p| p.iter().map(|&l| tagger.labels().name(l).to_owned()).collect())
        .collect();
    let (gold, predicted) = align_predictions(gold, &names)?;
    Ok(evaluate(&gold, &predicted)?)
}

/// The evaluation report in the configured format.
pub fn eval(config: &RunConfig) -> Result<String> {
    let gold = test_corpus(config, None)?;
    let evaluation = match &config.data.predictions {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let (gold, predicted) = align_predictions(&gold, &parse_last_column(&text))?;
            evaluate(&gold, &predicted).with_context(|| format!("scoring {}", path.display()))?
        }
        None => evaluate_tagger(&Tagger::load(&config.output.model)?, &gold, decoding(config))?,
    };
    Ok(match config.output.report_format {
        ReportFormat::Text => evaluation.report(),
        ReportFormat::Kv => evaluation.key_values(),
    })
}

/// Runs the configured grid, writes curves, and returns the comparison table.
pub fn al_simulate(config: &RunConfig) -> Result<String> {
    let (pool, test) = pool_and_test(config)?;
    let features = config.features.build()?;
    let configs: Vec<_> = config.active.seeds.iter().flat_map(|&s| config.al_grid(s)).collect();
    log::info!(
        "{} run(s) over a pool of {} and a test set of {}",
        configs.len(),
        pool.len(),
        test.len()
    );
    let runs = simulate_all(&pool, &test, &features, &configs)?;
    let dir = &config.output.curves;
    write_curves(&runs, dir)?;
    let table = comparison_table(&runs);
    std::fs::write(dir.join("comparison.txt"), &table)?;
    if config.output.plot {
        std::fs::write(dir.join("curves.svg"), svg_plot(&runs))?;
    }
    Ok(table)
}

pub fn open_session(config: &RunConfig) -> Result<AnnotationSession> {
    let (pool, test) = pool_and_test(config)?;
    let a = &config.active;
    let al = config.al_config(config.ensemble.decoder, a.reweight, a.selection, a.seeds[0]);
    AnnotationSession::open(
        &pool,
        test,
        config.features.build()?,
        al,
        &config.serve.state_dir,
        config.serve.marginals,
    )
}

pub fn serve(config: &RunConfig) -> Result<()> {
    let session = open_session(config)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&config.serve.addr)
            .await
            .with_context(|| format!("binding {}", config.serve.addr))?;
        log::info!("annotation service listening on {}", listener.local_addr()?);
        serve_http(listener, AppState::new(session)).await?;
        Ok(())
    })
}

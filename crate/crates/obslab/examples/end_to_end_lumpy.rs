//! Drives the full harness programmatically on the lumpy-background task:
//! dataset generation, the Hotelling template by two routes, the network
//! observer, evaluation, and the aggregated report — the same steps the
//! `obslab` binary runs from its subcommands.

use std::error::Error;
use std::fs;
use std::path::Path;

use obslab::harness::{evaluate, generate, prepare_run, report, train_ho, train_io};

fn main() -> Result<(), Box<dyn Error>> {
    let out = Path::new("target/example-out/end_to_end_lumpy");
    fs::create_dir_all(out)?;

    // The standard lumpy task with pools sized for a coffee-break run.
    let config_path = out.join("lumpy.txt");
    fs::write(
        &config_path,
        "task.type = ske_bks_lumpy\n\
         data.objects = 1200\n\
         data.train_per_class = 500\n\
         data.validation_per_class = 100\n\
         data.test_per_class = 200\n\
         train.loss = cg\n\
         train.max_batches = 400\n\
         train.batch_per_class = 50\n\
         train.validation_every = 50\n\
         ladder.depths = 1\n\
         ladder.filters = 4\n\
         rng.seed = 2024\n",
    )?;

    let mut ctx = prepare_run(&config_path, out, None, 1)?;
    println!("run directory {}", ctx.dir.display());

    println!("generating datasets and object pool ...");
    generate(&ctx)?;

    println!("solving the Hotelling template by conjugate gradients ...");
    train_ho(&ctx)?;

    println!("training the linear network on the decomposition loss ...");
    ctx.config.set("train.loss", "covdecomp")?;
    train_ho(&ctx)?;

    println!("training the network observer ...");
    train_io(&ctx)?;

    println!("evaluating every stored observer ...\n");
    let evaluation = evaluate(&ctx)?;
    println!(
        "{:<16}{:>9}{:>9}{:>13}",
        "observer", "auc", "snr_t", "vs hotelling"
    );
    let ho_auc = evaluation
        .observers
        .iter()
        .find(|o| o.name == "slnn_cg")
        .map(|o| o.auc)
        .expect("solver route present");
    for o in &evaluation.observers {
        let delta = o.auc - ho_auc;
        println!(
            "{:<16}{:>9.4}{:>9}{:>+13.4}",
            o.name,
            o.auc,
            o.snr_t.map_or("-".into(), |v| format!("{v:.4}")),
            delta
        );
    }

    let table = report(out)?;
    println!("\naggregated report (also in {}):\n{table}", out.join("report.txt").display());
    Ok(())
}

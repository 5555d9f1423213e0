use std::time::Instant;

use gestalt_core::experiments::{run, ExperimentConfig};

fn main() -> gestalt_core::Result<()> {
    let path = std::env::args().nth(1).expect("config path");
    let mut cfg = ExperimentConfig::load(std::path::Path::new(&path))?;
    if let Some(r) = std::env::args().nth(2) {
        cfg.regions = r.split(',').map(|s| s.parse()).collect::<gestalt_core::Result<_>>()?;
    }
    let t = Instant::now();
    let report = run(&cfg, None)?;
    print!("{}", report.tables());
    for r in &report.regions {
        println!("{} val {:?} loss {:.3}", r.name, r.final_val_top1, r.final_train_loss);
    }
    println!("elapsed {:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}

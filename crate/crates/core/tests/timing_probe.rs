// Temporary timing probe. Deleted before ship.
use std::time::Instant;

use cmbench_core::bench::{run_config, PolicySpec, RunConfig};
use cmbench_core::clickmodels::{ModelKind, ModelSpec};
use cmbench_core::corpus::synth_corpus;
use cmbench_core::metrics::CmipConfig;
use cmbench_core::usersim::{UserKind, UserModelConfig};

#[test]
#[ignore]
fn time_one_cell() {
    let t0 = Instant::now();
    let corpus = synth_corpus(500, 10, &[1.0; 5], 1).unwrap();
    println!("corpus: {:?}", t0.elapsed());

    let config = RunConfig {
        cmip: CmipConfig::default(),
        ..RunConfig::new(
            "probe",
            UserModelConfig::new(UserKind::Pbm),
            PolicySpec::NoisyOracle { variance: 0.5 },
            PolicySpec::Uniform,
            ModelKind::ALL.iter().map(|&k| ModelSpec::new(k)).collect(),
            42,
        )
    };
    let t1 = Instant::now();
    let rows = run_config(&config, &corpus).unwrap();
    println!("cell total: {:?}", t1.elapsed());
    for r in &rows {
        println!(
            "{}: ind {:.4} ood {:.4} ndcg {:.4} cmip {:.4}",
            r.model, r.ind_ppl, r.ood_ppl, r.ndcg, r.cmip
        );
    }
}

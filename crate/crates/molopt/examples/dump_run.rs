//! Writes one tiny deterministic experiment to the directory in argv[1];
//! used to compare parallel and sequential builds byte for byte.

fn main() {
    let out = std::env::args().nth(1).expect("output dir");
    let mut cfg = molopt::config::ExperimentConfig::example();
    cfg.seed = 31;
    cfg.training.iterations = 2;
    cfg.training.num_leads = 4;
    cfg.training.rollouts_per_lead = 4;
    cfg.inference.num_eval_leads = 4;
    cfg.inference.evolve.budget = 40;
    cfg.inference.evolve.generations = 3;
    cfg.inference.evolve.rollouts_per_parent = 4;
    molopt::experiment::run_experiment(&cfg, std::path::Path::new(&out), Some(4)).unwrap();
}

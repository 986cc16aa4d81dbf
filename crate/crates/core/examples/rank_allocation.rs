//! Sensitivity-driven rank allocation on the bundled toy model, compared with
//! a uniform split of the same budget.

use itera::sra::{self, AccuracyEvaluator, CompressionMethod, DecompositionEvaluator, SraParams, SyntheticTask, TaskMetric};
use itera::ModelSpec;

fn main() {
    let model = ModelSpec::default_toy(0);
    let task = SyntheticTask::new(&model, 256, 0, Some(8), TaskMetric::Top1WithLogitError).unwrap();
    let eval = DecompositionEvaluator::new(model, task, CompressionMethod::Iterative, 4).unwrap();
    let budget = 48;
    let caps = eval.max_ranks();
    let uniform = sra::init_allocation(caps.len(), budget, &caps, 1).unwrap().ranks;
    let out = sra::run_sra(&eval, budget, &SraParams::default()).unwrap();
    for t in out.trace.iter().step_by(4) {
        println!(
            "iter {:>3} delta {:>2} score {:.4} ranks {:?}",
            t.iteration, t.delta, t.score, t.ranks
        );
    }
    println!("uniform {:?}: {:.4}", uniform, eval.evaluate(&uniform).unwrap());
    println!(
        "sra     {:?}: {:.4} ({:?}, {} evaluations)",
        out.best.ranks, out.best_score, out.stop, out.evaluator_calls
    );
}

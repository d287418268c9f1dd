//! Shared fixtures for the benchmark targets.

use std::collections::BTreeMap;

use opline_core::checkpoint::{Checkpoint, Lineage, Role};
use opline_core::grid::GridField;
use opline_core::merge::{decompose, CoordinateLine};
use opline_core::operator::{init_weights, Normalizer, Operator, OperatorConfig, TrainObjective};
use opline_core::sim::{EvalRegime, FamilyKind, FamilySpec, TimeStepPolicy};

pub fn desk_operator_config(grid: usize) -> OperatorConfig {
    OperatorConfig {
        grid_h: grid,
        grid_w: grid,
        channels: 2,
        width: 16,
        modes: 8,
        layers: 3,
        lr: 1e-3,
        steps: 0,
        batch_size: 8,
        seed: 7,
        objective: TrainObjective::OneStep,
        eval_every: 50,
    }
}

pub fn desk_operator(grid: usize) -> Operator {
    Operator::seeded(desk_operator_config(grid), Normalizer::identity(2)).unwrap()
}

pub fn random_state(grid: usize, seed: u64) -> GridField {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    GridField::from_fn(grid, grid, 2, 1.0, 1.0, |_, _, _| rng.gen_range(-0.5..0.5)).unwrap()
}

pub fn diffreact_spec(grid: usize) -> FamilySpec {
    FamilySpec {
        kind: FamilyKind::DiffReact,
        axis_name: "d_u".into(),
        lambda_low: 8e-4,
        lambda_high: 1.2e-3,
        lambda_center: Some(1e-3),
        support: vec![1e-3],
        evaluation: vec![EvalRegime {
            lambda: 1.3e-3,
            validation: false,
        }],
        fixed: BTreeMap::from([("d_v".into(), 5e-3), ("k".into(), 5e-3)]),
        grid,
        frames: 4,
        step: TimeStepPolicy::FixedSubsteps {
            frame_dt: 0.05,
            substeps: 10,
        },
    }
}

pub fn synthetic_line(grid: usize) -> CoordinateLine {
    use rand::{Rng, SeedableRng};
    let cfg = desk_operator_config(grid);
    let weights = init_weights(&cfg).unwrap();
    let lineage = |role: Role, parent: Option<String>| Lineage {
        role,
        family: "diffreact".into(),
        lambda: None,
        parent,
        anchor: None,
        seed: 7,
        config_digest: "bench".into(),
        alpha: None,
        sources: None,
        note: "bench".into(),
    };
    let anchor = Checkpoint::new(
        weights,
        cfg.clone(),
        Normalizer::identity(2),
        lineage(Role::Anchor, None),
    );
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
    let perturbed = |ck: &Checkpoint, role: Role, rng: &mut rand_chacha::ChaCha8Rng| {
        let mut w = ck.weights.clone();
        for (_, t) in w.iter_mut() {
            for v in t.data.iter_mut() {
                *v += rng.gen_range(-0.01..0.01);
            }
        }
        Checkpoint::new(
            w,
            ck.config.clone(),
            ck.normalizer.clone(),
            lineage(role, Some(ck.content_hash())),
        )
    };
    let low = perturbed(&anchor, Role::EndpointLow, &mut rng);
    let high = perturbed(&anchor, Role::EndpointHigh, &mut rng);
    let d = decompose(&anchor, &low, &high).unwrap();
    CoordinateLine::new(d, -1.5, 1.5).unwrap()
}

//! Helpers shared by the integration tests.

use tablemb::corruption::CorruptionRecord;
use tablemb::params::{zeros_like, ParamSet};
use tablemb::training::accumulate_table_gradients;
use tablemb::{Model, Table};

fn loss(model: &Model<f64>, rec: &CorruptionRecord) -> f64 {
    let mut g = zeros_like(&model.params);
    accumulate_table_gradients(model, rec, &mut g, None).unwrap().0
}

/// Max relative error per tensor, comparing every entry.
pub fn check(model: &mut Model<f64>, rec: &CorruptionRecord, eps: f64) -> Vec<(String, f64)> {
    let mut grads = zeros_like(&model.params);
    accumulate_table_gradients(model, rec, &mut grads, None).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = grads.tensors().into_iter().map(|t| (t.name, t.data.to_vec())).collect();
    let mut out = Vec::new();
    for (ti, (name, a)) in analytic.iter().enumerate() {
        let mut worst = 0.0f64;
        for (k, &ak) in a.iter().enumerate() {
            let orig = model.params.tensors()[ti].data[k];
            model.params.tensors_mut()[ti].data[k] = orig + eps;
            let up = loss(model, rec);
            model.params.tensors_mut()[ti].data[k] = orig - eps;
            let down = loss(model, rec);
            model.params.tensors_mut()[ti].data[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let denom = ak.abs().max(numeric.abs()).max(1e-7);
            worst = worst.max((ak - numeric).abs() / denom);
        }
        out.push((name.clone(), worst));
    }
    out
}

pub fn record() -> CorruptionRecord {
    let t = Table::new(
        "g",
        None,
        vec![
            vec!["1999".into(), "Oslo".into(), "$3.10".into()],
            vec!["2004".into(), "Lima".into(), "$8.75".into()],
            vec!["walrus".into(), "Kyoto".into(), "$1.05".into()],
        ],
    )
    .unwrap();
    let mut rec = CorruptionRecord::clean(&t);
    rec.labels[2][0] = true;
    rec.labels[0][2] = true;
    rec
}

/// Max relative error over all tensors of the desk gradient-check model.
pub fn gradcheck_worst() -> Vec<(String, f64)> {
    let mut model = Model::<f64>::with_init_std(tablemb::ModelConfig::desk(8, 2, 2), 3, 0.3).unwrap();
    // A nonzero bias exercises its gradient path.
    model.params.classifier_b[0] = 0.1;
    check(&mut model, &record(), 1e-4)
}

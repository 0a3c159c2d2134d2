//! Freshen windows for the built-in trigger delays and for a long chain.

use freshen::predictor::{
    predict_window, AccountingLedger, ChainEvent, ChainSpec, LedgerConfig, Predictor, TriggerModel, WindowStart,
};
use freshen::time::SimTime;

fn main() {
    let model = TriggerModel::default();
    for trigger in ["step-functions", "direct", "sns", "s3"] {
        let chain = ChainSpec::linear("pair", 2, 100.0, trigger);
        let w = predict_window(&chain, &WindowStart::After(chain.nodes[0].name.clone()), &chain.nodes[1].name, &model).unwrap();
        println!("{trigger:>15}: {w}");
    }

    let chain = ChainSpec::linear("etl", 8, 700.0, "step-functions");
    let last = chain.nodes[7].name.clone();
    let w = predict_window(&chain, &WindowStart::ChainStart, &last, &model).unwrap();
    println!("8 x 700 ms chain, start to {last}: {w}");

    let mut p = Predictor::new(vec![chain.clone()], model, AccountingLedger::new(LedgerConfig::default()));
    p.depth = 3;
    let start = chain.entry.clone();
    for pred in p.predict(&ChainEvent::InvocationStarted(start), SimTime::ZERO).unwrap() {
        println!("{}", pred.directive);
    }
}

//! The accounting ledger turning freshen off after repeated
//! mispredictions and back on after a run of hits.

use freshen::predictor::{AccountingLedger, ChainEvent, ChainSpec, LedgerConfig, Predictor, SettleOutcome, TriggerModel};
use freshen::time::{SimDuration, SimTime};

fn main() {
    let chain = ChainSpec::linear("c", 2, 50.0, "direct");
    let (from, to) = (chain.nodes[0].name.clone(), chain.nodes[1].name.clone());
    let mut p = Predictor::new(vec![chain], TriggerModel::default(), AccountingLedger::new(LedgerConfig::default()));

    let mut script = vec![true, true];
    script.extend([false; 8]);
    script.extend([true; 8]);
    let mut now = SimTime::ZERO;
    for (i, hit) in script.into_iter().enumerate() {
        let event = ChainEvent::TriggerFired { from: from.clone(), to: to.clone() };
        let issued = p.predict(&event, now).unwrap().iter().any(|x| x.issued);
        p.settle(&to, if hit { SettleOutcome::InvokedInTime } else { SettleOutcome::Mispredicted });
        println!(
            "{i:>2}: freshen {:<6} outcome {:<5} confidence {:.2}{}",
            if issued { "issued" } else { "held" },
            if hit { "hit" } else { "miss" },
            p.ledger.confidence(&to),
            if p.ledger.is_suppressed(&to) { "  (suppressed)" } else { "" }
        );
        now = now + SimDuration::from_millis(1_000.0);
    }
}

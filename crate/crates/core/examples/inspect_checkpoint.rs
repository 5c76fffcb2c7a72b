//! Prints per-state greedy actions and Q-values of a checkpoint
//! (debug/diagnostic helper).
//!
//! Usage: cargo run --example inspect_checkpoint -- <checkpoint> [n_states]

use btrl::harness::Checkpoint;
use btrl::learner::Obs;

fn main() {
    let mut args = std::env::args().skip(1);
    let path = args.next().expect("checkpoint path");
    let limit: usize = args
        .next()
        .map(|s| s.parse().expect("n_states"))
        .unwrap_or(usize::MAX);
    let ck = Checkpoint::read(std::path::Path::new(&path)).expect("readable checkpoint");
    let arch = ck.qf.arch().clone();
    println!("arch: {arch:?}");
    let n = arch.n_states.min(limit);
    for s in 0..n {
        let q = ck.qf.q_values(&Obs::State(s));
        let best = q
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let row: Vec<String> = q.iter().map(|v| format!("{v:9.4}")).collect();
        println!("s={s:3}  greedy={best}  q=[{}]", row.join(", "));
    }
}

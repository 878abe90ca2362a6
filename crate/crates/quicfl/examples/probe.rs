use quicfl::codecs::expected_sq_error;
use quicfl::solver::{solve_table, SolverOptions};
use quicfl::tables::QuantConfig;

fn main() {
    for (b, l) in [(1u8, 1u8), (2, 2), (2, 3), (3, 2)] {
        let cfg = QuantConfig::new(b, l, 64, 1, 512).unwrap();
        let opts = SolverOptions { restarts: 8, seed: 5150, ..SolverOptions::default() };
        let result = solve_table(&cfg, &opts).unwrap();
        let table = &result.table;
        let s = table.sender().unwrap();
        let shared = cfg.num_shared();
        let mut worst = 0.0f64;
        for (qi, &q) in table.quantiles().iter().enumerate() {
            let mut contribution = 0.0;
            for h in 0..shared {
                for x in 0..cfg.num_messages() {
                    let e = q - table.recon()[h][x];
                    contribution += s[h][qi][x] * e * e;
                }
            }
            contribution /= shared as f64;
            let encoder = expected_sq_error(q, table).unwrap();
            worst = worst.max((encoder - contribution).abs());
        }
        println!("b={b} l={l}: worst |encoder MSE - objective contribution| = {worst:.3e}");
    }
}

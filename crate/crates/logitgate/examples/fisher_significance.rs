//! Exact significance testing on 2x2 contingency tables.
//!
//! ```bash
//! cargo run -p logitgate --example fisher_significance
//! ```

use logitgate::stats::{fisher_exact, ContingencyTable};

fn report(label: &str, a: u64, b: u64, c: u64, d: u64) -> logitgate::Result<()> {
    let table = ContingencyTable::new(a, b, c, d)?;
    let result = fisher_exact(&table);
    let flag = if result.degenerate {
        " (degenerate margin)"
    } else {
        ""
    };
    println!(
        "{label:<34} [[{a},{b}],[{c},{d}]]  p = {:.6e}{flag}",
        result.p_two_sided
    );
    Ok(())
}

fn main() -> logitgate::Result<()> {
    println!("two-sided Fisher's exact test\n");

    report("no association (uniform)", 5, 5, 5, 5)?;
    report("tiny table, perfect split", 1, 0, 0, 1)?;
    report("perfect split, n=20", 10, 0, 0, 10)?;
    report("weak effect", 9, 22, 44, 38)?;
    report("strong effect", 172, 46, 90, 127)?;
    report("zero row (vacuous)", 0, 0, 3, 4)?;

    // The shape that matters here: baseline answers a few probes, the
    // intervention arm answers almost all of them.
    println!();
    report("baseline 8/60 vs arm 60/60", 8, 52, 60, 0)?;
    report("baseline 8/60 vs arm 42/60", 8, 52, 42, 18)?;
    Ok(())
}

//! Parameter and traffic counts for adapting the attention projections of
//! a Llama-7B-shaped model.
//!
//! cargo run --example overhead_ledger

use dplora::ledger::{attention_param_count, lora_overhead, reported_llama_overheads, ModelShape};

fn main() -> anyhow::Result<()> {
    let shape = ModelShape::llama_7b();
    let attn = attention_param_count(&shape)?;
    println!("Q/K/V parameters per block: {}", attn.per_block);
    println!("Q/K/V parameters in {} blocks: {}", shape.layers, attn.total);

    let one = lora_overhead(50, 5, 1, 256, shape.width)?;
    println!(
        "one {0}x{0} matrix at r=256: {1} adapter vs {2} dense per upload",
        shape.width,
        one.per_round_per_node,
        shape.width * shape.width
    );
    println!("  over T=50 rounds and K=5 nodes: {}", one.total);

    println!("\nrank   upload/node/round   vs dense");
    for r in [8, 64, 256, 1024, 2048, 4096] {
        let o = lora_overhead(1, 1, shape.layers * shape.projections_per_layer, r, shape.width)?;
        println!("{r:>5}   {:>17}   {:>7.3}", o.per_round_per_node, o.reduction_ratio);
    }

    println!("\npublished rows (not derived from the count formula):");
    for row in reported_llama_overheads() {
        println!(
            "  r={:<5} {:.2e} params, {:.2}% of 6.7B (formula gives {})",
            row.rank, row.reported_params, row.recomputed_ratio_percent, row.formula_params
        );
    }
    Ok(())
}

//! The radix-2 non-restoring divider used by the softmax, checked against
//! Rust's truncating division.
//!
//! Run with: cargo run --example nonrestoring_divider

use intformer::kernels::{nonrestoring_div, DIVIDER_BITS};

fn main() {
    println!("{DIVIDER_BITS}-bit divider");
    for (num, den) in [(7, 2), (-7, 2), (0, 5), (1_048_575, 4097), (-3_000_000, 191), (123_456_789, 1)] {
        let q = nonrestoring_div(num, den).expect("in range");
        println!("{num:>12} / {den:<5} = {q:>10} (native {})", num / den);
    }
    for (num, den) in [(1, 0), (1, -3), (1i64 << 50, 3)] {
        println!("{num} / {den}: {}", nonrestoring_div(num, den).unwrap_err());
    }
}

//! Prints the extragradient separation table for the default horizon grid.

use saddle_core::harness::{default_t_grid, separation_report};

fn main() -> saddle_core::Result<()> {
    let rep = separation_report(2, 1.0, 1.0, 1.0 / 30.0, &default_t_grid())?;
    println!("{}", rep.to_csv()?);
    println!("last {:?}", rep.last_fit);
    println!("averaged {:?}", rep.averaged_fit);
    println!("difference {:.3}, bracket {}", rep.exponent_difference, rep.bracket_ok);
    Ok(())
}

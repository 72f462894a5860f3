//! Weighted isotonic regression and the step function it returns.

use bellman_calib::regression::pava_isotonic;

fn main() -> bellman_calib::Result<()> {
    let x = [0.1, 0.4, 0.35, 0.8, 0.9, 1.3, 1.2, 2.0];
    let y = [1.0, 3.0, 2.0, 2.5, 1.5, 4.0, 5.0, 4.5];
    let w = [1.0; 8];

    let f = pava_isotonic(&x, &y, &w, 0.0)?;
    println!("breakpoints {:?}", f.breakpoints());
    println!("levels      {:?}", f.levels());
    for v in [0.0, 0.5, 1.0, 1.25, 3.0] {
        println!("f({v}) = {}", f.evaluate(v));
    }

    // pooled blocks must carry at least this much weight
    let pooled = pava_isotonic(&x, &y, &w, 3.0)?;
    println!("min pool 3: {} levels {:?}", pooled.n_levels(), pooled.levels());
    Ok(())
}

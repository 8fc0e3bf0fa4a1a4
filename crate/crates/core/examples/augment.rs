//! The flip/rotation draws for one sample across epochs, and where each
//! transform sends the top-left corner.

use slpnet::data::{sample_rng, Transform};

fn main() {
    let n = 4;
    for epoch in 0..6 {
        let t = Transform::draw(&mut sample_rng(7, epoch, "ISIC_0000000"));
        println!(
            "epoch {epoch}: hflip {:<5} vflip {:<5} turns {}  (0,0) -> {:?}",
            t.hflip,
            t.vflip,
            t.quarter_turns,
            t.map(n, 0, 0)
        );
    }
}

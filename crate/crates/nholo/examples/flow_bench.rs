use nholo::fedosov::{recursion_r, FedosovContext};
fn main() {
    let ctx = FedosovContext::synthetic(2, 2, &[0.8, -0.5, 0.3, 0.6]);
    let t0 = std::time::Instant::now();
    let comps = recursion_r(&ctx, 6, 0).unwrap();
    println!("recursion Deg 6 (order 0): {:.2} s", t0.elapsed().as_secs_f64());
    for (k, c) in comps.iter().enumerate() {
        println!("  r^({k}): {} terms", c.terms.len());
    }
}

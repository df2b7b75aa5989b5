use treelab_core::errorsynth::sample_error_rate;
use treelab_core::rng::seed_rng;

#[test]
fn print_fixture() {
    let mut rng = seed_rng(42);
    println!("FIXTURE sample_error_rate(1.0, seed 42 draw 1) = {:?}", sample_error_rate(1.0, &mut rng));
    println!("FIXTURE next draw = {:?}", sample_error_rate(0.5, &mut rng));
}

use paneitz_core::curvature::*;
use paneitz_core::catalog::sphere_coordinate;
use paneitz_core::fields::ScalarField;

fn main() {
    let g = MetricField::round();
    let z1 = sphere_coordinate(0);
    let c = ScalarField::constant(1.0);
    let phi = c.add(&z1.scale(0.3));
    for r in [1.0, 100.0, 1e4, 1e5, 1e6, 4e7] {
        let x = [r, 0.0, 0.0];
        let p = paneitz_apply_exact(&g, &phi, x);
        let gn = paneitz_core::sphere::green_north_field().eval(x);
        match p {
            Ok(v) => println!("r = {r:.0e}: P phi = {v:+.6e}, G = {gn:+.3e}"),
            Err(e) => println!("r = {r:.0e}: error {e}"),
        }
    }
}

use meltwin_core::features;
use meltwin_core::params::ProcessParams;
use meltwin_core::sim::{extract_sections, SimDomain, Simulator};
use meltwin_core::thermo::MaterialProps;
use std::time::Instant;

#[test]
#[ignore]
fn probe() {
    let p = ProcessParams::new(250.0, 1.25, 300.0, 0.4);
    let props = MaterialProps::default();
    for spacing in [12.5, 6.25] {
        let domain = SimDomain::compact(4000.0, 500.0, 400.0, spacing, 500.0, 3700.0);
        let mut sim = Simulator::new(props);
        let t0 = Instant::now();
        match sim.run_to_steady(&p, &domain) {
            Ok(out) => {
                let (xy, xz) = extract_sections(&out.field).unwrap();
                let l = features::pool_length(&[&xy, &xz], props.t_solidus) * 1e6;
                let w = features::pool_width(&xy, props.t_solidus) * 1e6;
                let tp = features::peak_temperature(&[&xy, &xz]);
                println!(
                    "d={spacing}: {:.0}s steps={} | 3D: T={:.1} L={:.1} W={:.1} | chi: T={:.1} L={:.1} W={:.1}",
                    t0.elapsed().as_secs_f64(), out.diag.steps,
                    out.diag.pool.t_peak_k, out.diag.pool.length_um, out.diag.pool.width_um,
                    tp, l, w
                );
            }
            Err(e) => println!("d={spacing}: ERR {e} ({:.0}s)", t0.elapsed().as_secs_f64()),
        }
    }
}
